//! Verdict collection: backends, response parsing, lexicon matching,
//! response caching and verdict persistence.

mod cache;
mod http;
mod lexicon;
mod parse;
mod records;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use http::{
    HttpConfig, HttpFailure, HttpLlm, RequestTemplate, DEFAULT_BACKOFF_MS, DEFAULT_MAX_RETRIES, DEFAULT_MAX_TOKENS,
    DEFAULT_TIMEOUT_SECS,
};
pub use lexicon::{match_canonical, CanonicalLexicon, LexiconRule};
pub use parse::{parse_response, ParseStatus, SubgoalFlags};
pub use records::{read_verdicts, RecordError, VerdictRecord, VerdictWriter};

use crate::keyroom::{SubgoalEvent, Transition, PICKUP_SUBGOAL, UNLOCK_SUBGOAL};
use crate::promptkit::PromptText;

pub const DEFAULT_RESPONSE_CAP: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("backend {backend} failed for prompt {prompt_id} after {attempts} attempt(s): {message}")]
    Backend { backend: String, prompt_id: String, attempts: u32, message: String },
    #[error("no recorded response for prompt {prompt_id} (transition {transition_id})")]
    MissingRecord { prompt_id: String, transition_id: String },
    #[error("response cache")]
    Cache(#[from] io::Error),
}

/// Which verdicts count as a positive prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositivePolicy {
    /// A lexicon-matched canonical flag is true.
    #[default]
    LexiconFiltered,
    /// Any reported subgoal is true.
    AnyTrue,
}

impl PositivePolicy {
    pub fn name(self) -> &'static str {
        match self {
            PositivePolicy::LexiconFiltered => "lexicon-filtered",
            PositivePolicy::AnyTrue => "any-true",
        }
    }
}

impl fmt::Display for PositivePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PositivePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexicon-filtered" | "lexicon" => Ok(PositivePolicy::LexiconFiltered),
            "any-true" | "any" => Ok(PositivePolicy::AnyTrue),
            other => Err(format!("unknown positive policy {other:?} (expected lexicon-filtered or any-true)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub latency_ms: u64,
    pub backend: String,
    pub prompt_id: String,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationVerdict {
    pub transition_id: String,
    pub subgoal_flags: SubgoalFlags,
    pub matched_canonical: IndexMap<String, bool>,
    pub parse_status: ParseStatus,
    pub raw: RawResponse,
}

impl AnnotationVerdict {
    /// Builds a verdict by parsing `raw.text`.
    pub fn from_raw(transition_id: impl Into<String>, raw: RawResponse, lexicon: &CanonicalLexicon) -> Self {
        let (subgoal_flags, parse_status) = parse_response(&raw.text);
        let matched_canonical = match_canonical(&subgoal_flags, lexicon);
        Self { transition_id: transition_id.into(), subgoal_flags, matched_canonical, parse_status, raw }
    }

    pub fn is_positive(&self, policy: PositivePolicy) -> bool {
        match policy {
            PositivePolicy::LexiconFiltered => self.matched_canonical.values().any(|&v| v),
            PositivePolicy::AnyTrue => self.subgoal_flags.values().any(|&v| v),
        }
    }

    /// Whether the verdict confirms that `event` was achieved.
    pub fn confirms(&self, event: SubgoalEvent, policy: PositivePolicy) -> bool {
        if !event.is_achievement() {
            return false;
        }
        match policy {
            PositivePolicy::LexiconFiltered => {
                self.matched_canonical.get(event.canonical_name()).copied().unwrap_or(false)
            }
            PositivePolicy::AnyTrue => self.is_positive(policy),
        }
    }
}

/// The dictionary an ideal annotator would answer for `event`.
pub fn oracle_response_text(event: SubgoalEvent) -> String {
    format!(
        "{{\n    \"{PICKUP_SUBGOAL}\": {},\n    \"{UNLOCK_SUBGOAL}\": {},\n}}",
        py_bool(event == SubgoalEvent::KeyPickedUp),
        py_bool(event == SubgoalEvent::DoorUnlocked)
    )
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

/// Replays fixed responses. Lookup order: by prompt id, by transition id,
/// then `responses[hash(prompt_id) % len]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub by_prompt: IndexMap<String, String>,
    #[serde(default)]
    pub by_transition: IndexMap<String, String>,
}

impl MockScript {
    pub fn constant(text: impl Into<String>) -> Self {
        Self { responses: vec![text.into()], ..Self::default() }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn pick(&self, prompt_id: &str, transition_id: &str) -> Option<&str> {
        if let Some(r) = self.by_prompt.get(prompt_id).or_else(|| self.by_transition.get(transition_id)) {
            return Some(r);
        }
        if self.responses.is_empty() {
            return None;
        }
        let digest = Sha256::digest(prompt_id.as_bytes());
        let n = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        Some(&self.responses[(n % self.responses.len() as u64) as usize])
    }
}

#[derive(Clone, Debug, Deserialize)]
struct RecordedLine {
    #[serde(default)]
    prompt_id: Option<String>,
    #[serde(default)]
    transition_id: Option<String>,
    #[serde(default)]
    config_name: Option<String>,
    #[serde(alias = "response", alias = "text")]
    raw_text: String,
}

/// Previously collected responses, e.g. a `verdicts.jsonl` from another run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordedResponses {
    pub path: PathBuf,
    by_prompt: HashMap<String, String>,
    by_transition: HashMap<(String, Option<String>), String>,
}

impl RecordedResponses {
    pub fn load(path: &Path) -> io::Result<Self> {
        let mut out = Self { path: path.to_path_buf(), ..Self::default() };
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordedLine = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            if let Some(p) = rec.prompt_id {
                out.by_prompt.entry(p).or_insert_with(|| rec.raw_text.clone());
            }
            if let Some(t) = rec.transition_id {
                out.by_transition.entry((t, rec.config_name)).or_insert(rec.raw_text);
            }
        }
        Ok(out)
    }

    pub fn lookup(&self, prompt_id: &str, transition_id: &str, config_name: &str) -> Option<&str> {
        self.by_prompt
            .get(prompt_id)
            .or_else(|| self.by_transition.get(&(transition_id.to_owned(), Some(config_name.to_owned()))))
            .or_else(|| self.by_transition.get(&(transition_id.to_owned(), None)))
            .map(String::as_str)
    }
}

#[derive(Clone, Debug)]
pub enum AnnotatorBackend {
    HttpLlm(Box<HttpLlm>),
    Oracle,
    RecordedFile(Arc<RecordedResponses>),
    Mock(Arc<MockScript>),
}

impl AnnotatorBackend {
    pub fn id(&self) -> String {
        match self {
            AnnotatorBackend::HttpLlm(h) => format!("http:{}@{}", h.config.model, h.config.endpoint),
            AnnotatorBackend::Oracle => "oracle".into(),
            AnnotatorBackend::RecordedFile(r) => format!("recorded:{}", r.path.display()),
            AnnotatorBackend::Mock(m) if m.name.is_empty() => "mock".into(),
            AnnotatorBackend::Mock(m) => format!("mock:{}", m.name),
        }
    }

    /// Short display name for reports.
    pub fn label(&self) -> String {
        backend_label(&self.id())
    }

    pub fn model(&self) -> &str {
        match self {
            AnnotatorBackend::HttpLlm(h) => &h.config.model,
            _ => "",
        }
    }

    fn respond(&self, prompt: &PromptText, t: &Transition) -> Result<String, AnnotateError> {
        let prompt_id = prompt.prompt_id();
        let missing = || AnnotateError::MissingRecord { prompt_id: prompt_id.clone(), transition_id: t.id.clone() };
        match self {
            AnnotatorBackend::Oracle => Ok(oracle_response_text(t.event)),
            AnnotatorBackend::Mock(script) => script.pick(&prompt_id, &t.id).map(str::to_owned).ok_or_else(missing),
            AnnotatorBackend::RecordedFile(rec) => {
                rec.lookup(&prompt_id, &t.id, &prompt.spec.config_name()).map(str::to_owned).ok_or_else(missing)
            }
            AnnotatorBackend::HttpLlm(h) => h.complete(&prompt.text).map_err(|f| AnnotateError::Backend {
                backend: self.id(),
                prompt_id: prompt_id.clone(),
                attempts: f.attempts,
                message: f.message,
            }),
        }
    }
}

/// Display name for a backend id: `oracle` becomes `Oracle`, prefixes such
/// as `mock:` are dropped, and `model@endpoint` keeps only the model.
pub fn backend_label(id: &str) -> String {
    if id == "oracle" {
        return "Oracle".into();
    }
    let rest = id.split_once(':').map_or(id, |(_, r)| r);
    let rest = if id.starts_with("http:") { rest.split_once('@').map_or(rest, |(m, _)| m) } else { rest };
    let rest = if id.starts_with("recorded:") {
        Path::new(rest).file_stem().and_then(|s| s.to_str()).unwrap_or(rest)
    } else {
        rest
    };
    rest.to_owned()
}

fn truncate_to(mut text: String, cap: usize) -> (String, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text.truncate(end);
    (text, true)
}

/// A backend plus the lexicon, response cap and optional cache.
#[derive(Clone, Debug)]
pub struct Annotator {
    pub backend: AnnotatorBackend,
    pub lexicon: CanonicalLexicon,
    pub response_cap: usize,
    pub cache: Option<Arc<ResponseCache>>,
}

impl Annotator {
    pub fn new(backend: AnnotatorBackend) -> Self {
        Self { backend, lexicon: CanonicalLexicon::default(), response_cap: DEFAULT_RESPONSE_CAP, cache: None }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn annotate(&self, prompt: &PromptText, t: &Transition) -> Result<AnnotationVerdict, AnnotateError> {
        let prompt_id = prompt.prompt_id();
        let backend_id = self.backend.id();
        let key = cache_key(&backend_id, self.backend.model(), &prompt_id);
        let cached = self.cache.as_ref().and_then(|c| c.get(&key));
        let (text, latency_ms) = match cached {
            Some(entry) => (entry.text, entry.latency_ms),
            None => {
                let started = Instant::now();
                let text = self.backend.respond(prompt, t)?;
                let latency_ms = started.elapsed().as_millis() as u64;
                if let Some(cache) = &self.cache {
                    cache.put(CacheEntry {
                        key,
                        backend: backend_id.clone(),
                        model: self.backend.model().to_owned(),
                        prompt_hash: prompt_id.clone(),
                        text: text.clone(),
                        latency_ms,
                    })?;
                }
                (text, latency_ms)
            }
        };
        let (text, truncated) = truncate_to(text, self.response_cap);
        let raw = RawResponse { text, latency_ms, backend: backend_id, prompt_id, truncated };
        Ok(AnnotationVerdict::from_raw(t.id.clone(), raw, &self.lexicon))
    }

    /// Annotates `jobs` with up to `parallel` concurrent calls. Results are
    /// handed to `sink` on the calling thread in job order; a sink error
    /// stops further work and is returned.
    pub fn annotate_all<E, F>(&self, jobs: &[(PromptText, &Transition)], parallel: usize, mut sink: F) -> Result<(), E>
    where
        F: FnMut(usize, Result<AnnotationVerdict, AnnotateError>) -> Result<(), E>,
    {
        let parallel = parallel.clamp(1, jobs.len().max(1));
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..parallel {
                let tx = tx.clone();
                let (next, stop) = (&next, &stop);
                scope.spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((prompt, t)) = jobs.get(i) else { break };
                    if tx.send((i, self.annotate(prompt, t))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut expected = 0;
            for (i, result) in rx {
                pending.insert(i, result);
                while let Some(result) = pending.remove(&expected) {
                    if let Err(e) = sink(expected, result) {
                        stop.store(true, Ordering::Relaxed);
                        return Err(e);
                    }
                    expected += 1;
                }
            }
            Ok(())
        })
    }
}

/// Annotates one prompt with default lexicon and no cache.
pub fn annotate(
    backend: &AnnotatorBackend,
    prompt: &PromptText,
    t: &Transition,
) -> Result<AnnotationVerdict, AnnotateError> {
    Annotator::new(backend.clone()).annotate(prompt, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyroom::{explore, generate_layout, LayoutConfig};
    use crate::promptkit::{compose, PromptSpec, SubgoalMode};
    use crate::textview::ViewKind;

    fn transitions() -> Vec<Transition> {
        let l = Arc::new(generate_layout(3, &LayoutConfig::default()).unwrap());
        explore(&l, 10_000)
            .into_iter()
            .map(|e| Transition::new(e.before, e.action, e.outcome.state, e.outcome.task_reward, e.outcome.event))
            .collect()
    }

    fn spec() -> PromptSpec {
        PromptSpec::new(ViewKind::Cropped, SubgoalMode::canonical())
    }

    #[test]
    fn oracle_matches_events() {
        let ts = transitions();
        assert!(ts.iter().any(|t| t.event == SubgoalEvent::DoorUnlocked));
        for t in ts.iter().take(400).chain(ts.iter().filter(|t| t.event.is_achievement())) {
            let v = annotate(&AnnotatorBackend::Oracle, &compose(&spec(), t).unwrap(), t).unwrap();
            assert_eq!(v.parse_status, ParseStatus::Ok);
            assert_eq!(v.matched_canonical[PICKUP_SUBGOAL], t.event == SubgoalEvent::KeyPickedUp);
            assert_eq!(v.matched_canonical[UNLOCK_SUBGOAL], t.event == SubgoalEvent::DoorUnlocked);
            assert_eq!(v.subgoal_flags, v.matched_canonical);
        }
    }

    #[test]
    fn mock_lookup_order() {
        let ts = transitions();
        let t = &ts[0];
        let p = compose(&spec(), t).unwrap();
        let mut script = MockScript::constant("{'a': True}");
        assert_eq!(script.pick(&p.prompt_id(), &t.id), Some("{'a': True}"));
        script.by_transition.insert(t.id.clone(), "{'b': False}".into());
        assert_eq!(script.pick(&p.prompt_id(), &t.id), Some("{'b': False}"));
        script.by_prompt.insert(p.prompt_id(), "{'c': True}".into());
        assert_eq!(script.pick(&p.prompt_id(), &t.id), Some("{'c': True}"));
        assert_eq!(MockScript::default().pick("x", "y"), None);
    }

    #[test]
    fn unparseable_reply_is_a_verdict() {
        let ts = transitions();
        let backend = AnnotatorBackend::Mock(Arc::new(MockScript::constant("I cannot tell.")));
        let v = annotate(&backend, &compose(&spec(), &ts[0]).unwrap(), &ts[0]).unwrap();
        assert_eq!(v.parse_status, ParseStatus::Unparseable);
        assert!(v.subgoal_flags.is_empty());
        assert!(!v.is_positive(PositivePolicy::AnyTrue));
    }

    #[test]
    fn labels() {
        assert_eq!(backend_label("oracle"), "Oracle");
        assert_eq!(backend_label("mock"), "mock");
        assert_eq!(backend_label("mock:gemma-7b"), "gemma-7b");
        assert_eq!(backend_label("http:llama@http://h:8000/v1"), "llama");
        assert_eq!(backend_label("recorded:/x/human.jsonl"), "human");
    }

    #[test]
    fn response_cap_truncates_on_char_boundary() {
        let (t, cut) = truncate_to("ééé".into(), 3);
        assert_eq!((t.as_str(), cut), ("é", true));
        let (t, cut) = truncate_to("abc".into(), 3);
        assert_eq!((t.as_str(), cut), ("abc", false));
    }

    #[test]
    fn positive_policies() {
        let raw = RawResponse {
            text: String::new(),
            latency_ms: 0,
            backend: "x".into(),
            prompt_id: "p".into(),
            truncated: false,
        };
        let mut v = AnnotationVerdict::from_raw(
            "t",
            RawResponse { text: "{'Explore': True}".into(), ..raw },
            &CanonicalLexicon::default(),
        );
        assert!(!v.is_positive(PositivePolicy::LexiconFiltered));
        assert!(v.is_positive(PositivePolicy::AnyTrue));
        assert!(v.confirms(SubgoalEvent::KeyPickedUp, PositivePolicy::AnyTrue));
        assert!(!v.confirms(SubgoalEvent::None, PositivePolicy::AnyTrue));
        v.matched_canonical.insert(UNLOCK_SUBGOAL.into(), true);
        assert!(v.confirms(SubgoalEvent::DoorUnlocked, PositivePolicy::LexiconFiltered));
        assert!(!v.confirms(SubgoalEvent::KeyPickedUp, PositivePolicy::LexiconFiltered));
        assert_eq!("any-true".parse::<PositivePolicy>(), Ok(PositivePolicy::AnyTrue));
    }

    #[test]
    fn parallel_results_arrive_in_order() {
        let ts = transitions();
        let jobs: Vec<_> = ts.iter().take(40).map(|t| (compose(&spec(), t).unwrap(), t)).collect();
        let annotator = Annotator::new(AnnotatorBackend::Oracle);
        let mut seen = Vec::new();
        annotator
            .annotate_all(&jobs, 4, |i, r| {
                assert_eq!(r.unwrap().transition_id, jobs[i].1.id);
                seen.push(i);
                Ok::<_, ()>(())
            })
            .unwrap();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
        let stopped = annotator.annotate_all(&jobs, 4, |i, _| if i == 5 { Err(i) } else { Ok(()) });
        assert_eq!(stopped, Err(5));
    }

    #[test]
    fn cache_short_circuits_backend() {
        let ts = transitions();
        let t = &ts[0];
        let p = compose(&spec(), t).unwrap();
        let cache = Arc::new(ResponseCache::in_memory());
        let first = Annotator::new(AnnotatorBackend::Mock(Arc::new(MockScript::constant("{'x': True}"))))
            .with_cache(cache.clone());
        first.annotate(&p, t).unwrap();
        // Same backend id and model: the cached text wins.
        let second = Annotator::new(AnnotatorBackend::Mock(Arc::new(MockScript::constant("{'y': True}"))))
            .with_cache(cache.clone());
        let v = second.annotate(&p, t).unwrap();
        assert!(v.subgoal_flags.contains_key("x"));
        assert_eq!(cache.len(), 1);
    }
}
