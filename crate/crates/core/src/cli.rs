//! Command-line entry point: collect, render, prompt, annotate,
//! annotate-human, evaluate, ablate and train.
//!
//! Settings resolve as flags > environment (`SGC_*`) > config file >
//! defaults. The config file is flat `key = value` text whose keys are flag
//! names; values are exported as the matching `SGC_*` variable unless that
//! variable is already set.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;

use crate::annotators::{
    backend_label, read_verdicts, AnnotateError, AnnotationVerdict, Annotator, AnnotatorBackend, HttpConfig, HttpLlm,
    MockScript, PositivePolicy, RecordError, RecordedResponses, RequestTemplate, ResponseCache, VerdictRecord,
    VerdictWriter,
};
use crate::datasets::{
    append_reference, collect_balanced, enumerate_transitions, write_atomic, CollectConfig, CollectError, DatasetError,
    DatasetManifest, ReferenceError, ReferenceLabel, ReferenceLabels,
};
use crate::keyroom::{generate_layout, GridState, LayoutConfig, LayoutError, Transition};
use crate::metrics::{
    ablation_delta, delta_csv, rows_from_csv, score, AblationError, MetricsRow, RandomBaseline, Report, ScoreError,
};
use crate::promptkit::{compose, config_matrix, find_config, NamedConfig, PromptError, PromptSpec, CANONICAL_SUBGOALS};
use crate::shaper::{
    curves_csv, median, q_learn, LearningCurve, LiveSource, QParams, ShapeError, ShapingConfig, ShapingMode,
    TerminationSource, VerdictTable,
};
use crate::textview::{render, render_transition, ViewKind};

pub const ENV_PREFIX: &str = "SGC_";

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "subgoal-critic",
    version,
    about = "Subgoal verdicts for a key-door gridworld: collect, prompt, annotate, score, shape"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GlobalArgs {
    /// Directory for default inputs and outputs.
    #[arg(long, global = true, env = "SGC_WORKSPACE", default_value = ".")]
    pub workspace: PathBuf,
    #[arg(long, global = true, env = "SGC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "SGC_LOG_LEVEL", default_value = "warn")]
    pub log_level: String,
    /// Flat key = value file supplying defaults for any flag.
    #[arg(long, global = true, env = "SGC_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Collect a balanced dataset of random-policy transitions.
    Collect(CollectArgs),
    /// Print the observation text of a dataset transition or a fresh layout.
    Render(RenderArgs),
    /// Compose prompts for dataset transitions.
    Prompt(PromptArgs),
    /// Collect verdicts from a backend into verdicts.jsonl.
    Annotate(AnnotateArgs),
    /// Label transitions interactively (y/n/s per subgoal) into a reference file.
    AnnotateHuman(AnnotateHumanArgs),
    /// Score verdicts against reference labels and write reports.
    Evaluate(EvaluateArgs),
    /// Per-annotator F1 change between two metrics CSVs.
    Ablate(AblateArgs),
    /// Tabular Q-learning with and without subgoal shaping.
    Train(TrainArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct CollectArgs {
    #[arg(long, env = "SGC_SIZE", default_value_t = 256)]
    pub size: usize,
    #[arg(long, env = "SGC_MAX_ROLLOUTS", default_value_t = 100_000)]
    pub max_rollouts: usize,
    #[arg(long, env = "SGC_STEP_CAP", default_value_t = 200)]
    pub step_cap: u32,
    /// Allow scripted walk-to-door prefixes while unlock events are short.
    #[arg(long, env = "SGC_ASSISTED")]
    pub assisted: bool,
    /// RFC 3339 timestamp stored in the manifest (default: now).
    #[arg(long, env = "SGC_CREATED_AT")]
    pub created_at: Option<String>,
    /// Output file (default: <workspace>/dataset.jsonl).
    #[arg(long, env = "SGC_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    #[arg(long, env = "SGC_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Transition index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Render the initial state of a generated layout instead of a dataset entry.
    #[arg(long, conflicts_with = "dataset")]
    pub env_seed: Option<u64>,
    #[arg(long, env = "SGC_VIEW", default_value = "cropped")]
    pub view: ViewKind,
    #[arg(long, env = "SGC_NOSEP")]
    pub nosep: bool,
    #[arg(long, env = "SGC_ACTION")]
    pub action: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct PromptArgs {
    #[arg(long, env = "SGC_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Configuration names, or `main` / `all`.
    #[arg(
        long = "config-name",
        alias = "prompt-config",
        env = "SGC_CONFIG_NAME",
        value_delimiter = ',',
        default_value = "gamescreen-provided"
    )]
    pub configs: Vec<String>,
    #[arg(long, env = "SGC_LIMIT")]
    pub limit: Option<usize>,
    /// Write prompts.jsonl here instead of printing.
    #[arg(long, env = "SGC_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    Mock,
    Recorded,
    Http,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BackendArgs {
    #[arg(long, env = "SGC_BACKEND", value_enum, default_value = "oracle")]
    pub backend: BackendKind,
    /// JSON script for the mock backend.
    #[arg(long, env = "SGC_MOCK_SCRIPT")]
    pub mock_script: Option<PathBuf>,
    /// JSONL of earlier responses for the recorded backend.
    #[arg(long, env = "SGC_RECORDED")]
    pub recorded: Option<PathBuf>,
    #[arg(long, env = "SGC_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "SGC_MODEL")]
    pub model: Option<String>,
    #[arg(long, env = "SGC_API_KEY", hide_env_values = true)]
    #[serde(skip)]
    pub api_key: Option<String>,
    #[arg(long, env = "SGC_TIMEOUT", default_value_t = crate::annotators::DEFAULT_TIMEOUT_SECS)]
    pub timeout: u64,
    #[arg(long, env = "SGC_MAX_RETRIES", default_value_t = crate::annotators::DEFAULT_MAX_RETRIES)]
    pub max_retries: u32,
    #[arg(long, env = "SGC_BACKOFF_MS", default_value_t = crate::annotators::DEFAULT_BACKOFF_MS)]
    pub backoff_ms: u64,
    #[arg(long, env = "SGC_MAX_TOKENS", default_value_t = crate::annotators::DEFAULT_MAX_TOKENS)]
    pub max_tokens: u32,
    /// JSON request template for servers that are not chat-completion shaped.
    #[arg(long, env = "SGC_REQUEST_TEMPLATE")]
    pub request_template: Option<PathBuf>,
    #[arg(long, env = "SGC_RESPONSE_CAP", default_value_t = crate::annotators::DEFAULT_RESPONSE_CAP)]
    pub response_cap: usize,
    /// Response cache (default for http: <out-dir>/response-cache.jsonl).
    #[arg(long, env = "SGC_CACHE")]
    pub cache: Option<PathBuf>,
    /// Annotator name for mock scripts.
    #[arg(long, env = "SGC_NAME")]
    pub name: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct AnnotateArgs {
    #[arg(long, env = "SGC_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Annotate every transition of a generated layout instead of a dataset.
    #[arg(long, conflicts_with = "dataset")]
    pub enumerate_env: Option<u64>,
    #[arg(
        long = "config-name",
        alias = "prompt-config",
        env = "SGC_CONFIG_NAME",
        value_delimiter = ',',
        default_value = "gamescreen-provided"
    )]
    pub configs: Vec<String>,
    #[arg(long, env = "SGC_LIMIT")]
    pub limit: Option<usize>,
    #[arg(long, env = "SGC_PARALLEL", default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Directory for verdicts.jsonl (default: workspace).
    #[arg(long, env = "SGC_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AnnotateHumanArgs {
    #[arg(long, env = "SGC_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(
        long = "config-name",
        alias = "prompt-config",
        env = "SGC_CONFIG_NAME",
        default_value = "gamescreen-provided"
    )]
    pub config_name: String,
    #[arg(long, env = "SGC_ANNOTATOR_ID", default_value = "human")]
    pub annotator_id: String,
    /// Reference file to create or resume (default: <workspace>/reference.jsonl).
    #[arg(long, env = "SGC_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Constant,
    Simulated,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, env = "SGC_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Verdict files; when absent, the backend is run inline.
    #[arg(long, env = "SGC_VERDICTS", value_delimiter = ',')]
    pub verdicts: Vec<PathBuf>,
    /// Reference labels (default: ground truth from the dataset).
    #[arg(long, env = "SGC_REFERENCE")]
    pub reference: Option<PathBuf>,
    #[arg(long, env = "SGC_POLICY", default_value = "lexicon-filtered")]
    pub policy: PositivePolicy,
    #[arg(long, env = "SGC_BASELINE", value_enum, default_value = "constant")]
    pub baseline: BaselineKind,
    #[arg(
        long = "config-name",
        alias = "prompt-config",
        env = "SGC_CONFIG_NAME",
        value_delimiter = ',',
        default_value = "gamescreen-provided"
    )]
    pub configs: Vec<String>,
    #[arg(long, env = "SGC_PARALLEL", default_value_t = 1)]
    pub parallel: usize,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Report directory (default: <workspace>/report).
    #[arg(long, env = "SGC_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    /// Metrics CSV of the baseline configuration.
    #[arg(long, env = "SGC_BASE")]
    pub base: PathBuf,
    /// Metrics CSV of the variant configuration.
    #[arg(long, env = "SGC_VARIANT")]
    pub variant: PathBuf,
    /// Output CSV (default: <workspace>/ablation.csv).
    #[arg(long, env = "SGC_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Sparse,
    Oracle,
    Cached,
    Live,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Sparse => "sparse",
            Arm::Oracle => "oracle",
            Arm::Cached => "cached",
            Arm::Live => "live",
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, env = "SGC_ARM", value_enum, value_delimiter = ',', default_value = "sparse,oracle")]
    pub arm: Vec<Arm>,
    #[arg(long, env = "SGC_EPISODES", default_value_t = crate::shaper::DEFAULT_EPISODES)]
    pub episodes: usize,
    /// Number of run seeds, starting at --seed.
    #[arg(long, env = "SGC_SEEDS", default_value_t = 5)]
    pub seeds: u64,
    /// Layout seed.
    #[arg(long, env = "SGC_ENV_SEED", default_value_t = 0)]
    pub env_seed: u64,
    #[arg(long, env = "SGC_MODE", default_value = "additive")]
    pub mode: ShapingMode,
    #[arg(long, env = "SGC_BONUS", default_value_t = crate::shaper::DEFAULT_BONUS)]
    pub bonus: f64,
    #[arg(long, env = "SGC_GAMMA", default_value_t = crate::shaper::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, env = "SGC_ALPHA", default_value_t = crate::shaper::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, env = "SGC_EPSILON_START", default_value_t = 1.0)]
    pub epsilon_start: f64,
    #[arg(long, env = "SGC_EPSILON_END", default_value_t = 0.05)]
    pub epsilon_end: f64,
    #[arg(long, env = "SGC_DECAY_FRACTION", default_value_t = 0.6)]
    pub decay_fraction: f64,
    #[arg(long, env = "SGC_STEP_CAP", default_value_t = 200)]
    pub step_cap: u32,
    /// Pay the bonus every time a subgoal fires, not once per episode.
    #[arg(long, env = "SGC_UNGUARDED")]
    pub unguarded: bool,
    #[arg(long, env = "SGC_POLICY", default_value = "lexicon-filtered")]
    pub policy: PositivePolicy,
    /// Verdict files for the cached arm.
    #[arg(long, env = "SGC_VERDICTS", value_delimiter = ',')]
    pub verdicts: Vec<PathBuf>,
    /// Prompt configuration for the live arm.
    #[arg(
        long = "config-name",
        alias = "prompt-config",
        env = "SGC_CONFIG_NAME",
        default_value = "gamescreen-provided"
    )]
    pub config_name: String,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output directory for curves.csv (default: <workspace>/train).
    #[arg(long, env = "SGC_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

// ---- errors ----------------------------------------------------------------

/// Failure category printed in the one-line error.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        let kind = if cause.is::<ConfigFileError>() {
            "config"
        } else if cause.is::<DatasetError>() {
            "dataset"
        } else if cause.is::<ReferenceError>() {
            "reference"
        } else if cause.is::<CollectError>() || cause.is::<LayoutError>() {
            "collect"
        } else if cause.is::<AnnotateError>() {
            "backend"
        } else if cause.is::<RecordError>() {
            "verdicts"
        } else if cause.is::<ScoreError>() || cause.is::<AblationError>() {
            "score"
        } else if cause.is::<ShapeError>() {
            "shaping"
        } else if cause.is::<PromptError>() {
            "prompt"
        } else if cause.is::<UsageError>() {
            "usage"
        } else if cause.is::<io::Error>() {
            "io"
        } else {
            continue;
        };
        return kind;
    }
    "internal"
}

/// `error: kind=<kind> message="<message>"` on one line.
pub fn format_error(err: &anyhow::Error) -> String {
    let message = format!("{err:#}").replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error: kind={} message=\"{}\"", error_kind(err), message)
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigFileError(String);

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

// ---- config file -----------------------------------------------------------

/// Environment variable names the CLI reads, across all subcommands.
pub fn known_env_vars() -> HashSet<String> {
    fn walk(cmd: &clap::Command, out: &mut HashSet<String>) {
        for arg in cmd.get_arguments() {
            if let Some(env) = arg.get_env() {
                out.insert(env.to_string_lossy().into_owned());
            }
        }
        for sub in cmd.get_subcommands() {
            walk(sub, out);
        }
    }
    let mut out = HashSet::new();
    walk(&Cli::command(), &mut out);
    out
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.trim().trim_start_matches("--").replace('-', "_").to_uppercase())
}

/// Parses a flat `key = value` file; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, ConfigFileError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| ConfigFileError(format!("line {}: expected key = value", n + 1)))?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(v);
        out.push((k.trim().to_owned(), v.to_owned()));
    }
    Ok(out)
}

fn config_path_from_args(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    std::env::var_os("SGC_CONFIG").map(PathBuf::from)
}

/// Exports config-file values as `SGC_*` variables that are not already set.
pub fn apply_config_file(args: &[OsString]) -> Result<Vec<(String, String)>, ConfigFileError> {
    let Some(path) = config_path_from_args(args) else { return Ok(Vec::new()) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ConfigFileError(format!("cannot read config file {}: {e}", path.display())))?;
    let known = known_env_vars();
    let mut applied = Vec::new();
    for (key, value) in parse_config_file(&text)? {
        let name = env_name(&key);
        if !known.contains(&name) {
            return Err(ConfigFileError(format!("{}: unknown key {key:?}", path.display())));
        }
        if std::env::var_os(&name).is_none() {
            std::env::set_var(&name, &value);
            applied.push((key, value));
        }
    }
    Ok(applied)
}

// ---- helpers ---------------------------------------------------------------

fn resolve(workspace: &Path, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| workspace.join(default))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

/// Writes `<name>.config.json` with every resolved setting (API key omitted).
fn write_snapshot<A: Serialize>(dir: &Path, name: &str, global: &GlobalArgs, args: &A) -> Result<()> {
    ensure_dir(dir)?;
    let snap = serde_json::json!({ "subcommand": name, "global": global, "args": args });
    let text = serde_json::to_string_pretty(&snap)? + "\n";
    let path = dir.join(format!("{name}.config.json"));
    write_atomic(&path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    let (m, warnings) = DatasetManifest::load(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(m)
}

fn expand_configs(names: &[String]) -> Result<Vec<NamedConfig>> {
    let mut out: Vec<NamedConfig> = Vec::new();
    for name in names {
        let batch = match name.as_str() {
            "main" => config_matrix().into_iter().filter(|c| c.main).collect(),
            "all" => config_matrix(),
            other => vec![find_config(other)?],
        };
        for c in batch {
            if !out.iter().any(|o| o.name == c.name) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

fn build_annotator(b: &BackendArgs, out_dir: &Path) -> Result<Annotator> {
    let backend = match b.backend {
        BackendKind::Oracle => AnnotatorBackend::Oracle,
        BackendKind::Mock => {
            let path = b.mock_script.as_ref().ok_or_else(|| usage("--backend mock needs --mock-script"))?;
            let mut script =
                MockScript::load(path).with_context(|| format!("cannot load mock script {}", path.display()))?;
            if let Some(name) = &b.name {
                script.name = name.clone();
            }
            AnnotatorBackend::Mock(Arc::new(script))
        }
        BackendKind::Recorded => {
            let path = b.recorded.as_ref().ok_or_else(|| usage("--backend recorded needs --recorded"))?;
            let rec = RecordedResponses::load(path)
                .with_context(|| format!("cannot load recorded responses {}", path.display()))?;
            AnnotatorBackend::RecordedFile(Arc::new(rec))
        }
        BackendKind::Http => {
            let endpoint =
                b.endpoint.clone().ok_or_else(|| usage("--backend http needs --endpoint or SGC_ENDPOINT"))?;
            let model = b.model.clone().ok_or_else(|| usage("--backend http needs --model or SGC_MODEL"))?;
            let mut cfg = HttpConfig::new(endpoint, model);
            cfg.api_key = b.api_key.clone();
            cfg.timeout_secs = b.timeout;
            cfg.max_retries = b.max_retries;
            cfg.backoff_base_ms = b.backoff_ms;
            cfg.max_tokens = b.max_tokens;
            if let Some(path) = &b.request_template {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read request template {}", path.display()))?;
                cfg.template = serde_json::from_str::<RequestTemplate>(&text)
                    .map_err(|e| usage(format!("bad request template {}: {e}", path.display())))?;
            }
            AnnotatorBackend::HttpLlm(Box::new(HttpLlm::new(cfg)))
        }
    };
    let mut annotator = Annotator::new(backend);
    annotator.response_cap = b.response_cap;
    let cache_path = match (&b.cache, b.backend) {
        (Some(p), _) => Some(p.clone()),
        (None, BackendKind::Http) => Some(out_dir.join("response-cache.jsonl")),
        (None, _) => None,
    };
    if let Some(path) = cache_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        let cache =
            ResponseCache::open(&path).with_context(|| format!("cannot open response cache {}", path.display()))?;
        annotator = annotator.with_cache(Arc::new(cache));
    }
    Ok(annotator)
}

// ---- subcommands -----------------------------------------------------------

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn cmd_collect(g: &GlobalArgs, a: &CollectArgs, out: &mut dyn Write) -> Result<()> {
    let path = resolve(&g.workspace, &a.out, "dataset.jsonl");
    let cfg = CollectConfig { layout: LayoutConfig::default(), step_cap: a.step_cap, assisted: a.assisted };
    let mut m = collect_balanced(g.seed, a.size, a.max_rollouts, &cfg)?;
    m.created_at = match &a.created_at {
        Some(ts) => {
            chrono::DateTime::parse_from_rfc3339(ts).map_err(|e| usage(format!("--created-at {ts:?}: {e}")))?;
            ts.clone()
        }
        None => now_rfc3339(),
    };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    m.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
    write_snapshot(dir, "collect", g, a)?;
    let counts: Vec<String> = m.counts().iter().map(|(c, n)| format!("{} {n}", c.name())).collect();
    writeln!(
        out,
        "collected {} transitions ({}) in {} rollouts -> {}",
        m.len(),
        counts.join(", "),
        m.rollouts,
        path.display()
    )?;
    Ok(())
}

pub fn cmd_render(g: &GlobalArgs, a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let text = if let Some(seed) = a.env_seed {
        let layout = Arc::new(generate_layout(seed, &LayoutConfig::default())?);
        render(&GridState::initial(layout), a.view, !a.nosep).text()
    } else {
        let path = resolve(&g.workspace, &a.dataset, "dataset.jsonl");
        let m = load_dataset(&path)?;
        let t = m
            .transitions()
            .nth(a.index)
            .ok_or_else(|| usage(format!("index {} out of range (dataset has {})", a.index, m.len())))?;
        render_transition(t, a.view, !a.nosep, a.action)
    };
    writeln!(out, "{text}")?;
    Ok(())
}

#[derive(Serialize)]
struct PromptLine<'a> {
    prompt_id: String,
    transition_id: &'a str,
    config_name: &'a str,
    text: &'a str,
}

pub fn cmd_prompt(g: &GlobalArgs, a: &PromptArgs, out: &mut dyn Write) -> Result<()> {
    let m = load_dataset(&resolve(&g.workspace, &a.dataset, "dataset.jsonl"))?;
    let configs = expand_configs(&a.configs)?;
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut lines = String::new();
    let mut n = 0;
    for c in &configs {
        for t in m.transitions().take(limit) {
            let p = compose(&c.spec, t)?;
            n += 1;
            if a.out_dir.is_some() {
                let line =
                    PromptLine { prompt_id: p.prompt_id(), transition_id: &t.id, config_name: &c.name, text: &p.text };
                lines.push_str(&serde_json::to_string(&line)?);
                lines.push('\n');
            } else {
                if n > 1 {
                    writeln!(out, "{}", "=".repeat(80))?;
                }
                write!(out, "{}", p.text)?;
            }
        }
    }
    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        write_atomic(&dir.join("prompts.jsonl"), lines.as_bytes())?;
        write_snapshot(dir, "prompt", g, a)?;
        writeln!(out, "wrote {n} prompts -> {}", dir.join("prompts.jsonl").display())?;
    }
    Ok(())
}

struct Job {
    config_name: String,
    prompt: crate::promptkit::PromptText,
}

fn build_jobs<'a>(
    transitions: &'a [Transition],
    configs: &[NamedConfig],
    limit: Option<usize>,
) -> Result<Vec<(Job, &'a Transition)>> {
    let mut jobs = Vec::new();
    for c in configs {
        for t in transitions.iter().take(limit.unwrap_or(usize::MAX)) {
            jobs.push((Job { config_name: c.name.clone(), prompt: compose(&c.spec, t)? }, t));
        }
    }
    Ok(jobs)
}

#[derive(Default)]
struct Accounting {
    prompts: usize,
    prompt_chars: usize,
    response_chars: usize,
    latency_ms: u64,
}

impl Accounting {
    fn line(&self, backend: &str, skipped: usize) -> String {
        let mean = if self.prompts == 0 { 0 } else { self.latency_ms / self.prompts as u64 };
        format!(
            "annotated {} prompts ({} already present) backend={} prompt_chars={} est_prompt_tokens={} response_chars={} total_latency_ms={} mean_latency_ms={}",
            self.prompts,
            skipped,
            backend,
            self.prompt_chars,
            self.prompt_chars.div_ceil(4),
            self.response_chars,
            self.latency_ms,
            mean
        )
    }
}

/// Annotates `jobs`, appending each verdict to `writer` in job order.
fn run_jobs(
    annotator: &Annotator,
    jobs: &[(Job, &Transition)],
    parallel: usize,
    mut on_verdict: impl FnMut(&Job, AnnotationVerdict) -> Result<()>,
) -> Result<Accounting> {
    let pairs: Vec<_> = jobs.iter().map(|(j, t)| (j.prompt.clone(), *t)).collect();
    let mut acct = Accounting::default();
    annotator.annotate_all(&pairs, parallel, |i, result| -> Result<()> {
        let v = result?;
        let job = &jobs[i].0;
        acct.prompts += 1;
        acct.prompt_chars += job.prompt.text.len();
        acct.response_chars += v.raw.text.len();
        acct.latency_ms += v.raw.latency_ms;
        on_verdict(job, v)
    })?;
    Ok(acct)
}

pub fn cmd_annotate(g: &GlobalArgs, a: &AnnotateArgs, out: &mut dyn Write) -> Result<()> {
    let out_dir = a.out_dir.clone().unwrap_or_else(|| g.workspace.clone());
    ensure_dir(&out_dir)?;
    let transitions: Vec<Transition> = match a.enumerate_env {
        Some(seed) => enumerate_transitions(&Arc::new(generate_layout(seed, &LayoutConfig::default())?)),
        None => load_dataset(&resolve(&g.workspace, &a.dataset, "dataset.jsonl"))?.transitions().cloned().collect(),
    };
    let configs = expand_configs(&a.configs)?;
    let annotator = build_annotator(&a.backend, &out_dir)?;
    let backend_id = annotator.backend.id();
    let path = out_dir.join("verdicts.jsonl");
    let done: HashSet<(String, String)> = if path.exists() {
        read_verdicts(&path)?
            .into_iter()
            .filter(|r| r.backend == backend_id)
            .map(|r| (r.prompt_id, r.config_name))
            .collect()
    } else {
        HashSet::new()
    };
    let all = build_jobs(&transitions, &configs, a.limit)?;
    let total = all.len();
    let jobs: Vec<_> =
        all.into_iter().filter(|(j, _)| !done.contains(&(j.prompt.prompt_id(), j.config_name.clone()))).collect();
    let skipped = total - jobs.len();
    let mut writer = VerdictWriter::append(&path)?;
    write_snapshot(&out_dir, "annotate", g, a)?;
    let acct = run_jobs(&annotator, &jobs, a.parallel, |job, v| {
        writer.write(&VerdictRecord::from_verdict(&v, &job.config_name))?;
        Ok(())
    })?;
    writeln!(out, "{}", acct.line(&backend_id, skipped))?;
    writeln!(out, "verdicts -> {}", path.display())?;
    Ok(())
}

/// Interactive labelling loop. Each unlabelled transition's prompt is
/// printed, then one y/n/s answer per canonical subgoal is read; `s` marks
/// the subgoal as ambiguous (stored false with a note) and `q` stops.
pub fn annotate_human_session(
    manifest: &DatasetManifest,
    spec: &PromptSpec,
    reference_path: &Path,
    annotator_id: &str,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<usize> {
    let existing = if reference_path.exists() {
        ReferenceLabels::load_resumable(reference_path)?
    } else {
        ReferenceLabels::default()
    };
    if reference_path.exists() {
        // Rewrite without a torn tail so appends start on a fresh line.
        existing.save(reference_path)?;
    }
    let pending: Vec<&Transition> = manifest.transitions().filter(|t| existing.get(&t.id).is_none()).collect();
    writeln!(output, "{} labelled, {} to go", existing.len(), pending.len())?;
    let mut written = 0;
    'outer: for (n, t) in pending.iter().enumerate() {
        let prompt = compose(spec, t)?;
        writeln!(output, "{}", "=".repeat(80))?;
        writeln!(output, "[{}/{}] transition {}", n + 1, pending.len(), t.id)?;
        write!(output, "{}", prompt.text)?;
        let mut flags = IndexMap::new();
        let mut flagged = Vec::new();
        for name in CANONICAL_SUBGOALS {
            let answer = loop {
                write!(output, "{name}? [y/n/s/q] ")?;
                output.flush()?;
                let mut line = String::new();
                if input.read_line(&mut line)? == 0 {
                    break 'outer;
                }
                match line.trim().to_lowercase().as_str() {
                    "y" | "yes" => break Some(true),
                    "n" | "no" => break Some(false),
                    "s" | "skip" => break None,
                    "q" | "quit" => break 'outer,
                    _ => writeln!(output, "please answer y, n, s or q")?,
                }
            };
            if answer.is_none() {
                flagged.push(name);
            }
            flags.insert(name.to_owned(), answer.unwrap_or(false));
        }
        let note = if flagged.is_empty() { String::new() } else { format!("ambiguous: {}", flagged.join(", ")) };
        let label = ReferenceLabel {
            transition_id: t.id.clone(),
            flags,
            annotator_id: annotator_id.to_owned(),
            note,
            extras: Default::default(),
        };
        append_reference(reference_path, &label)?;
        written += 1;
    }
    Ok(written)
}

pub fn cmd_annotate_human(g: &GlobalArgs, a: &AnnotateHumanArgs, out: &mut dyn Write) -> Result<()> {
    let m = load_dataset(&resolve(&g.workspace, &a.dataset, "dataset.jsonl"))?;
    let config = find_config(&a.config_name)?;
    let path = resolve(&g.workspace, &a.out, "reference.jsonl");
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    write_snapshot(dir, "annotate-human", g, a)?;
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let n = annotate_human_session(&m, &config.spec, &path, &a.annotator_id, &mut input, out)?;
    writeln!(out, "recorded {n} labels -> {}", path.display())?;
    Ok(())
}

pub fn cmd_evaluate(g: &GlobalArgs, a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let m = load_dataset(&resolve(&g.workspace, &a.dataset, "dataset.jsonl"))?;
    let out_dir = resolve(&g.workspace, &a.out_dir, "report");
    ensure_dir(&out_dir)?;
    let reference = match &a.reference {
        Some(path) => {
            let r = ReferenceLabels::load(path)?;
            r.check_covers(&m)?;
            r
        }
        None => ReferenceLabels::from_ground_truth(m.transitions()),
    };

    let mut groups: IndexMap<(String, String), Vec<AnnotationVerdict>> = IndexMap::new();
    if a.verdicts.is_empty() {
        let transitions: Vec<Transition> = m.transitions().cloned().collect();
        let configs = expand_configs(&a.configs)?;
        let annotator = build_annotator(&a.backend, &out_dir)?;
        let jobs = build_jobs(&transitions, &configs, None)?;
        let mut records = String::new();
        run_jobs(&annotator, &jobs, a.parallel, |job, v| {
            let rec = VerdictRecord::from_verdict(&v, &job.config_name);
            records.push_str(&serde_json::to_string(&rec)?);
            records.push('\n');
            groups.entry((backend_label(&v.raw.backend), job.config_name.clone())).or_default().push(v);
            Ok(())
        })?;
        write_atomic(&out_dir.join("verdicts.jsonl"), records.as_bytes())?;
    } else {
        for path in &a.verdicts {
            for rec in read_verdicts(path)? {
                let key = (backend_label(&rec.backend), rec.config_name.clone());
                groups.entry(key).or_default().push(rec.into_verdict());
            }
        }
    }

    let mut rows = Vec::new();
    for ((name, config), verdicts) in &groups {
        let scored = score(verdicts, &reference, a.policy)
            .with_context(|| format!("scoring annotator {name:?} under {config:?}"))?;
        rows.push(MetricsRow::from_counts(name, config, scored.counts, scored.unparseable));
    }
    let baseline = match a.baseline {
        BaselineKind::Constant => RandomBaseline::Constant,
        BaselineKind::Simulated => RandomBaseline::Simulated { seed: g.seed },
    };
    let report = Report::new(rows, baseline.row(Some(&reference)), a.policy);
    write_atomic(&out_dir.join("report.txt"), report.table().as_bytes())?;
    write_atomic(&out_dir.join("report.csv"), report.csv().as_bytes())?;
    write_atomic(&out_dir.join("report.json"), report.json().as_bytes())?;
    write_snapshot(&out_dir, "evaluate", g, a)?;
    write!(out, "{}", report.table())?;
    writeln!(out, "reports -> {}", out_dir.display())?;
    Ok(())
}

pub fn cmd_ablate(g: &GlobalArgs, a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<MetricsRow>> {
        let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        rows_from_csv(&text).map_err(|e| usage(format!("{}: not a metrics CSV: {e}", p.display())))
    };
    let deltas = ablation_delta(&read(&a.base)?, &read(&a.variant)?)?;
    let csv = delta_csv(&deltas);
    let path = resolve(&g.workspace, &a.out, "ablation.csv");
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    write_atomic(&path, csv.as_bytes())?;
    write_snapshot(dir, "ablate", g, a)?;
    write!(out, "{csv}")?;
    Ok(())
}

pub fn cmd_train(g: &GlobalArgs, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let out_dir = resolve(&g.workspace, &a.out_dir, "train");
    ensure_dir(&out_dir)?;
    let layout = Arc::new(generate_layout(a.env_seed, &LayoutConfig::default())?);
    let params = QParams {
        alpha: a.alpha,
        gamma: a.gamma,
        epsilon_start: a.epsilon_start,
        epsilon_end: a.epsilon_end,
        decay_fraction: a.decay_fraction,
        episodes: a.episodes,
        step_cap: a.step_cap,
    };
    if a.episodes == 0 {
        bail!(usage("--episodes must be at least 1"));
    }
    let base = ShapingConfig {
        source: TerminationSource::Oracle,
        mode: a.mode,
        subgoal_bonus: a.bonus,
        gamma: a.gamma,
        once_per_trajectory: !a.unguarded,
        policy: a.policy,
    };
    let mut arms: Vec<(Arm, Option<ShapingConfig>)> = Vec::new();
    for &arm in &a.arm {
        let cfg = match arm {
            Arm::Sparse => None,
            Arm::Oracle => Some(base.clone()),
            Arm::Cached => {
                if a.verdicts.is_empty() {
                    bail!(usage("--arm cached needs --verdicts"));
                }
                let mut all = Vec::new();
                for p in &a.verdicts {
                    all.extend(read_verdicts(p)?.into_iter().map(VerdictRecord::into_verdict));
                }
                Some(ShapingConfig {
                    source: TerminationSource::Cached(Arc::new(VerdictTable::new(all))),
                    ..base.clone()
                })
            }
            Arm::Live => {
                let annotator = build_annotator(&a.backend, &out_dir)?;
                let spec = find_config(&a.config_name)?.spec;
                let live = Arc::new(LiveSource::new(annotator, spec));
                Some(ShapingConfig { source: TerminationSource::Live(live), ..base.clone() })
            }
        };
        arms.push((arm, cfg));
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|i| g.seed + i).collect();
    let runs: Vec<(Arm, u64)> = arms.iter().flat_map(|(arm, _)| seeds.iter().map(move |&s| (*arm, s))).collect();
    let results: Vec<Result<LearningCurve, ShapeError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|&(arm, seed)| {
                let cfg = arms.iter().find(|(a, _)| *a == arm).and_then(|(_, c)| c.clone());
                let (layout, params) = (Arc::clone(&layout), params);
                scope.spawn(move || q_learn(&layout, cfg.as_ref(), &params, seed, &arm.to_string()).map(|(c, _)| c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let curves: Vec<LearningCurve> = results.into_iter().collect::<Result<_, _>>()?;
    write_atomic(&out_dir.join("curves.csv"), curves_csv(&curves).as_bytes())?;
    let mut summary = String::from("arm,median_episodes_to_first_success,mean_success_rate_last_100\n");
    for (arm, _) in &arms {
        let mine: Vec<&LearningCurve> = curves.iter().filter(|c| c.arm == arm.to_string()).collect();
        let mut firsts: Vec<f64> =
            mine.iter().map(|c| c.episodes_to_first_success().map_or(f64::INFINITY, |e| e as f64)).collect();
        let rate = mine.iter().map(|c| c.success_rate_last(100)).sum::<f64>() / mine.len().max(1) as f64;
        summary.push_str(&format!("{arm},{},{rate}\n", median(&mut firsts)));
    }
    write_atomic(&out_dir.join("summary.csv"), summary.as_bytes())?;
    write_snapshot(&out_dir, "train", g, a)?;
    write!(out, "{summary}")?;
    writeln!(out, "curves -> {}", out_dir.join("curves.csv").display())?;
    Ok(())
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new().parse_filters(level).format_timestamp(None).try_init();
}

/// Parses `args`, runs the subcommand and writes normal output to `out`.
pub fn run(args: Vec<OsString>, out: &mut dyn Write) -> Result<()> {
    apply_config_file(&args)?;
    let cli = Cli::try_parse_from(&args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => anyhow!(ClapExit(e)),
        _ => usage(e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ")),
    })?;
    init_logging(&cli.global.log_level);
    let g = &cli.global;
    match &cli.command {
        Command::Collect(a) => cmd_collect(g, a, out),
        Command::Render(a) => cmd_render(g, a, out),
        Command::Prompt(a) => cmd_prompt(g, a, out),
        Command::Annotate(a) => cmd_annotate(g, a, out),
        Command::AnnotateHuman(a) => cmd_annotate_human(g, a, out),
        Command::Evaluate(a) => cmd_evaluate(g, a, out),
        Command::Ablate(a) => cmd_ablate(g, a, out),
        Command::Train(a) => cmd_train(g, a, out),
    }
}

/// Help or version output requested; not a failure.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ClapExit(pub clap::Error);

/// Process entry: returns the exit code.
pub fn main_entry() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(args, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            if let Some(ClapExit(c)) = e.downcast_ref::<ClapExit>() {
                let _ = c.print();
                return 0;
            }
            let _ = out.flush();
            eprintln!("{}", format_error(&e));
            if error_kind(&e) == "usage" {
                2
            } else {
                1
            }
        }
    }
}
