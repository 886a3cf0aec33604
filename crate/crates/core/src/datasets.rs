//! Balanced transition datasets and reference labels.
//!
//! `dataset.jsonl` starts with a manifest header line followed by one
//! transition per line. Each transition line embeds its layout, both state
//! snapshots and the rendered gamescreen so a file can be audited by eye.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keyroom::{
    explore, generate_layout, layout_fingerprint, solve, step, transition_id, transition_id_with, Action, CellKind,
    Coord, GridLayout, GridState, LayoutConfig, LayoutError, SubgoalEvent, Transition, DEFAULT_STEP_CAP,
    KEY_PICKUP_MESSAGE, NEVER_MIND_MESSAGE, PICKUP_SUBGOAL, UNLOCK_SUBGOAL, WALL_MESSAGE,
};
use crate::textview::{render_transition, ViewKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("subgoal-critic ", env!("CARGO_PKG_VERSION"));
pub const LAYOUT_POLICY: &str = "one-layout-per-episode";
pub const EPOCH: &str = "1970-01-01T00:00:00Z";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryLabel {
    KeyPickedUp,
    DoorUnlocked,
    None,
}

impl CategoryLabel {
    pub const ALL: [CategoryLabel; 3] = [CategoryLabel::KeyPickedUp, CategoryLabel::DoorUnlocked, CategoryLabel::None];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            CategoryLabel::KeyPickedUp => "pickup",
            CategoryLabel::DoorUnlocked => "unlock",
            CategoryLabel::None => "none",
        }
    }

    pub fn from_event(event: SubgoalEvent) -> Self {
        match event {
            SubgoalEvent::KeyPickedUp => CategoryLabel::KeyPickedUp,
            SubgoalEvent::DoorUnlocked => CategoryLabel::DoorUnlocked,
            SubgoalEvent::None => CategoryLabel::None,
        }
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical flags implied by the transition's event.
pub fn ground_truth_flags(t: &Transition) -> IndexMap<String, bool> {
    IndexMap::from([
        (PICKUP_SUBGOAL.to_owned(), t.event == SubgoalEvent::KeyPickedUp),
        (UNLOCK_SUBGOAL.to_owned(), t.event == SubgoalEvent::DoorUnlocked),
    ])
}

/// Per-category target sizes; the remainder goes to pickup, then unlock.
pub fn quotas(size: usize) -> BTreeMap<CategoryLabel, usize> {
    let base = size / 3;
    let rem = size % 3;
    CategoryLabel::ALL.iter().enumerate().map(|(i, &c)| (c, base + usize::from(i < rem))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub layout: LayoutConfig,
    pub step_cap: u32,
    /// Allow scripted walk-to-door prefixes while the unlock bucket is short.
    pub assisted: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { layout: LayoutConfig::default(), step_cap: DEFAULT_STEP_CAP, assisted: false }
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("size must be at least 3, got {0}")]
    TooSmall(usize),
    #[error("layout generation failed")]
    Layout(#[from] LayoutError),
    #[error(
        "rollout budget of {rollouts} exhausted before buckets filled (pickup {pickup}/{pickup_q}, unlock {unlock}/{unlock_q}, none {none}/{none_q})"
    )]
    Exhausted {
        rollouts: usize,
        pickup: usize,
        pickup_q: usize,
        unlock: usize,
        unlock_q: usize,
        none: usize,
        none_q: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub transition: Transition,
    /// Harvested from the random suffix of an assisted rollout.
    pub assisted: bool,
    /// Fields this version does not know about, kept for re-serialization.
    pub extras: Map<String, Value>,
}

impl DatasetEntry {
    pub fn category(&self) -> CategoryLabel {
        CategoryLabel::from_event(self.transition.event)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
    pub seed: u64,
    pub created_at: String,
    pub generator_version: String,
    pub layout_policy: String,
    pub rollouts: usize,
    pub extras: Map<String, Value>,
}

impl DatasetManifest {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter().map(|e| &e.transition)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> BTreeMap<CategoryLabel, usize> {
        let mut counts: BTreeMap<_, _> = CategoryLabel::ALL.iter().map(|&c| (c, 0)).collect();
        for e in &self.entries {
            *counts.entry(e.category()).or_default() += 1;
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&Transition> {
        self.transitions().find(|t| t.id == id)
    }
}

struct Bucket {
    cap: usize,
    seen: HashSet<String>,
    items: Vec<(Transition, bool)>,
}

impl Bucket {
    fn full(&self) -> bool {
        self.items.len() >= self.cap
    }

    /// Reservoir sampling over distinct transition ids.
    fn offer(&mut self, t: Transition, assisted: bool, rng: &mut ChaCha8Rng) {
        if self.cap == 0 || !self.seen.insert(t.id.clone()) {
            return;
        }
        if self.items.len() < self.cap {
            self.items.push((t, assisted));
        } else {
            let j = rng.random_range(0..self.seen.len());
            if j < self.cap {
                self.items[j] = (t, assisted);
            }
        }
    }
}

fn scripted_prefix(layout: &Arc<GridLayout>) -> Vec<Action> {
    let Some(plan) = solve(layout) else { return Vec::new() };
    let mut state = GridState::initial(Arc::clone(layout));
    let mut prefix = Vec::new();
    for action in plan {
        let out = step(&state, action).expect("plan stays in a live episode");
        if out.event == SubgoalEvent::DoorUnlocked {
            break;
        }
        prefix.push(action);
        state = out.state;
    }
    prefix
}

/// Harvests a balanced dataset from uniform-random rollouts, one fresh
/// layout per episode. Deterministic given `seed` and `cfg`.
pub fn collect_balanced(
    seed: u64,
    size: usize,
    max_rollouts: usize,
    cfg: &CollectConfig,
) -> Result<DatasetManifest, CollectError> {
    if size < 3 {
        return Err(CollectError::TooSmall(size));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir_rng = ChaCha8Rng::seed_from_u64(seed);
    reservoir_rng.set_stream(1);
    let mut buckets: BTreeMap<CategoryLabel, Bucket> =
        quotas(size).into_iter().map(|(c, cap)| (c, Bucket { cap, seen: HashSet::new(), items: Vec::new() })).collect();
    let mut rollouts = 0;
    while rollouts < max_rollouts && !buckets.values().all(Bucket::full) {
        let episode_seed = master.next_u64();
        let layout = Arc::new(generate_layout(episode_seed, &cfg.layout)?);
        let fingerprint = layout_fingerprint(&layout);
        let mut policy = ChaCha8Rng::seed_from_u64(episode_seed);
        policy.set_stream(2);
        let assisted = cfg.assisted && rollouts % 2 == 1 && !buckets[&CategoryLabel::DoorUnlocked].full();
        rollouts += 1;

        let mut state = GridState::initial(Arc::clone(&layout));
        if assisted {
            for action in scripted_prefix(&layout) {
                state = step(&state, action).expect("prefix stays in a live episode").state;
            }
        }
        while !state.terminated && state.step_count < cfg.step_cap {
            let action = Action::ALL[policy.random_range(0..Action::ALL.len())];
            let out = step(&state, action).expect("episode is live");
            let t = Transition {
                id: transition_id_with(&fingerprint, &state, action),
                before: state,
                action,
                after: out.state.clone(),
                task_reward: out.task_reward,
                event: out.event,
            };
            let bucket = buckets.get_mut(&CategoryLabel::from_event(t.event)).expect("all categories present");
            bucket.offer(t, assisted, &mut reservoir_rng);
            state = out.state;
        }
    }
    if !buckets.values().all(Bucket::full) {
        let have = |c| buckets[&c].items.len();
        let q = |c| buckets[&c].cap;
        use CategoryLabel::*;
        return Err(CollectError::Exhausted {
            rollouts,
            pickup: have(KeyPickedUp),
            pickup_q: q(KeyPickedUp),
            unlock: have(DoorUnlocked),
            unlock_q: q(DoorUnlocked),
            none: have(None),
            none_q: q(None),
        });
    }
    let mut entries: Vec<DatasetEntry> = buckets
        .into_values()
        .flat_map(|b| b.items)
        .map(|(transition, assisted)| DatasetEntry { transition, assisted, extras: Map::new() })
        .collect();
    for i in (1..entries.len()).rev() {
        let j = reservoir_rng.random_range(0..=i);
        entries.swap(i, j);
    }
    Ok(DatasetManifest {
        entries,
        seed,
        created_at: EPOCH.to_owned(),
        generator_version: GENERATOR_VERSION.to_owned(),
        layout_policy: LAYOUT_POLICY.to_owned(),
        rollouts,
        extras: Map::new(),
    })
}

/// Every transition reachable on `layout`, with each pre-state paired with
/// every message the environment can show. A superset of what any rollout
/// on the layout can produce, so cached verdicts built from it cover
/// training.
pub fn enumerate_transitions(layout: &Arc<GridLayout>) -> Vec<Transition> {
    let fingerprint = layout_fingerprint(layout);
    let messages = ["", WALL_MESSAGE, NEVER_MIND_MESSAGE, KEY_PICKUP_MESSAGE];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for edge in explore(layout, usize::MAX) {
        if !seen.insert(edge.from) {
            continue;
        }
        for msg in messages {
            let before = edge.before.clone().with_message(msg);
            for action in Action::ALL {
                let o = step(&before, action).expect("explored states are live");
                out.push(Transition {
                    id: transition_id_with(&fingerprint, &before, action),
                    before: before.clone(),
                    action,
                    after: o.state,
                    task_reward: o.task_reward,
                    event: o.event,
                });
            }
        }
    }
    out
}

// ---- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayoutRecord {
    rows: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    concealed: Vec<Coord>,
    agent_spawn: Coord,
    key_spawn: Option<Coord>,
}

impl LayoutRecord {
    fn from_layout(l: &GridLayout) -> Self {
        Self { rows: l.code_rows(), concealed: l.concealed_cells(), agent_spawn: l.agent_spawn, key_spawn: l.key_spawn }
    }

    fn to_layout(&self) -> Result<GridLayout, String> {
        let height = self.rows.len();
        let width = self.rows.first().map_or(0, |r| r.chars().count());
        let mut cells = Vec::with_capacity(width * height);
        for row in &self.rows {
            if row.chars().count() != width {
                return Err("ragged layout rows".into());
            }
            for ch in row.chars() {
                cells.push(CellKind::from_code(ch).ok_or_else(|| format!("unknown cell code {ch:?}"))?);
            }
        }
        let layout =
            GridLayout::from_parts(width, height, cells, vec![false; width * height], self.agent_spawn, self.key_spawn)
                .map_err(|e| e.to_string())?;
        Ok(layout.with_concealed(self.concealed.iter().copied()))
    }
}

#[derive(Serialize, Deserialize)]
struct StateRecord {
    agent_pos: Coord,
    key_on_floor: Option<Coord>,
    key_held: bool,
    door_locked: bool,
    last_message: String,
    step_count: u32,
    terminated: bool,
}

impl StateRecord {
    fn from_state(s: &GridState) -> Self {
        Self {
            agent_pos: s.agent_pos,
            key_on_floor: s.key_on_floor,
            key_held: s.key_held,
            door_locked: s.door_locked,
            last_message: s.last_message.clone(),
            step_count: s.step_count,
            terminated: s.terminated,
        }
    }

    fn into_state(self, layout: Arc<GridLayout>) -> GridState {
        GridState {
            layout,
            agent_pos: self.agent_pos,
            key_on_floor: self.key_on_floor,
            key_held: self.key_held,
            door_locked: self.door_locked,
            last_message: self.last_message,
            step_count: self.step_count,
            terminated: self.terminated,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TransitionLine {
    kind: String,
    id: String,
    category: CategoryLabel,
    action: Action,
    event: SubgoalEvent,
    task_reward: u8,
    assisted: bool,
    layout: LayoutRecord,
    before: StateRecord,
    after: StateRecord,
    gamescreen: String,
    #[serde(flatten)]
    extras: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    kind: String,
    schema_version: u32,
    generator_version: String,
    seed: u64,
    size: usize,
    counts: BTreeMap<CategoryLabel, usize>,
    created_at: String,
    layout_policy: String,
    rollouts: usize,
    assisted_count: usize,
    checksum: String,
    #[serde(flatten)]
    extras: Map<String, Value>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: file is empty or has no manifest header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: truncated at byte offset {offset}")]
    Truncated { path: PathBuf, offset: usize },
    #[error("{path}: malformed line {line} at byte offset {offset}: {message}")]
    Malformed { path: PathBuf, line: usize, offset: usize, message: String },
    #[error("{path}: schema version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: checksum mismatch (header {expected}, content {actual})")]
    Checksum { path: PathBuf, expected: String, actual: String },
    #[error("{path}: header declares {declared} transitions but {found} are present")]
    MissingTransitions { path: PathBuf, declared: usize, found: usize },
    #[error("{path}: transition {id} at line {line} has inconsistent labels or id")]
    Labels { path: PathBuf, id: String, line: usize },
    #[error("{path}: duplicate transition id {id}")]
    Duplicate { path: PathBuf, id: String },
}

fn transition_line(e: &DatasetEntry) -> String {
    let t = &e.transition;
    let line = TransitionLine {
        kind: "transition".into(),
        id: t.id.clone(),
        category: e.category(),
        action: t.action,
        event: t.event,
        task_reward: t.task_reward,
        assisted: e.assisted,
        layout: LayoutRecord::from_layout(&t.before.layout),
        before: StateRecord::from_state(&t.before),
        after: StateRecord::from_state(&t.after),
        gamescreen: render_transition(t, ViewKind::GameScreen, true, false),
        extras: e.extras.clone(),
    };
    serde_json::to_string(&line).expect("transition line serializes")
}

fn checksum(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl DatasetManifest {
    /// Canonical serialization: header line, then one line per transition.
    pub fn to_jsonl(&self) -> String {
        let lines: Vec<String> = self.entries.iter().map(transition_line).collect();
        let header = HeaderLine {
            kind: "manifest".into(),
            schema_version: SCHEMA_VERSION,
            generator_version: self.generator_version.clone(),
            seed: self.seed,
            size: self.entries.len(),
            counts: self.counts(),
            created_at: self.created_at.clone(),
            layout_policy: self.layout_policy.clone(),
            rollouts: self.rollouts,
            assisted_count: self.entries.iter().filter(|e| e.assisted).count(),
            checksum: checksum(&lines),
            extras: self.extras.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }

    /// Loads and re-validates a dataset. Returns warnings (e.g. a different
    /// generator version) alongside the manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<String>), DatasetError> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::from_jsonl(&text, path)
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<(DatasetManifest, Vec<String>), DatasetError> {
        let p = || path.to_path_buf();
        let mut lines = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            lines.push((offset, raw.strip_suffix('\n')));
            offset += raw.len();
        }
        let malformed =
            |line: usize, offset: usize, message: String| DatasetError::Malformed { path: p(), line, offset, message };
        let Some(&(_, header_text)) = lines.first() else {
            return Err(DatasetError::MissingHeader { path: p() });
        };
        let header_text = header_text.ok_or(DatasetError::Truncated { path: p(), offset: 0 })?;
        let header: HeaderLine = serde_json::from_str(header_text).map_err(|e| malformed(1, 0, e.to_string()))?;
        if header.kind != "manifest" {
            return Err(DatasetError::MissingHeader { path: p() });
        }
        if header.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::Version { path: p(), found: header.schema_version, expected: SCHEMA_VERSION });
        }
        let mut warnings = Vec::new();
        if header.generator_version != GENERATOR_VERSION {
            warnings.push(format!(
                "dataset written by {:?}, reading with {:?}",
                header.generator_version, GENERATOR_VERSION
            ));
        }

        let mut layouts: HashMap<String, Arc<GridLayout>> = HashMap::new();
        let mut entries = Vec::new();
        let mut canonical_lines = Vec::new();
        let mut ids = HashSet::new();
        for (n, &(offset, line)) in lines.iter().enumerate().skip(1) {
            let line_no = n + 1;
            let Some(line) = line else {
                return Err(DatasetError::Truncated { path: p(), offset });
            };
            if line.trim().is_empty() {
                continue;
            }
            let rec: TransitionLine =
                serde_json::from_str(line).map_err(|e| malformed(line_no, offset, e.to_string()))?;
            let layout = rec.layout.to_layout().map_err(|e| malformed(line_no, offset, e))?;
            let layout = Arc::clone(layouts.entry(layout_fingerprint(&layout)).or_insert_with(|| Arc::new(layout)));
            let before = rec.before.into_state(Arc::clone(&layout));
            let after = rec.after.into_state(layout);
            let t = Transition {
                id: rec.id,
                before,
                action: rec.action,
                after,
                task_reward: rec.task_reward,
                event: rec.event,
            };
            let replay_ok = step(&t.before, t.action).is_ok_and(|o| o.state == t.after && o.event == t.event);
            if !t.labels_consistent()
                || !replay_ok
                || CategoryLabel::from_event(t.event) != rec.category
                || transition_id(&t.before, t.action) != t.id
            {
                return Err(DatasetError::Labels { path: p(), id: t.id, line: line_no });
            }
            if !ids.insert(t.id.clone()) {
                return Err(DatasetError::Duplicate { path: p(), id: t.id });
            }
            let entry = DatasetEntry { transition: t, assisted: rec.assisted, extras: rec.extras };
            canonical_lines.push(transition_line(&entry));
            entries.push(entry);
        }
        if entries.len() != header.size {
            return Err(DatasetError::MissingTransitions { path: p(), declared: header.size, found: entries.len() });
        }
        let actual = checksum(&canonical_lines);
        if actual != header.checksum {
            return Err(DatasetError::Checksum { path: p(), expected: header.checksum, actual });
        }
        for w in &warnings {
            log::warn!("{}: {w}", path.display());
        }
        let manifest = DatasetManifest {
            entries,
            seed: header.seed,
            created_at: header.created_at,
            generator_version: header.generator_version,
            layout_policy: header.layout_policy,
            rollouts: header.rollouts,
            extras: header.extras,
        };
        Ok((manifest, warnings))
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

// ---- reference labels ----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLabel {
    pub transition_id: String,
    pub flags: IndexMap<String, bool>,
    pub annotator_id: String,
    #[serde(default)]
    pub note: String,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl ReferenceLabel {
    pub fn is_positive(&self) -> bool {
        self.flags.values().any(|&v| v)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReferenceLabels {
    pub labels: IndexMap<String, ReferenceLabel>,
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("i/o error on {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: transition {id} is labelled more than once")]
    Duplicate { path: PathBuf, id: String },
    #[error("reference does not match dataset: missing {missing:?}, extra {extra:?}")]
    Coverage { missing: Vec<String>, extra: Vec<String> },
}

impl ReferenceLabels {
    /// Ground-truth stand-in for a human reference.
    pub fn from_ground_truth<'a>(transitions: impl IntoIterator<Item = &'a Transition>) -> Self {
        let labels = transitions
            .into_iter()
            .map(|t| {
                let label = ReferenceLabel {
                    transition_id: t.id.clone(),
                    flags: ground_truth_flags(t),
                    annotator_id: "ground-truth".into(),
                    note: String::new(),
                    extras: Map::new(),
                };
                (t.id.clone(), label)
            })
            .collect();
        Self { labels }
    }

    pub fn insert(&mut self, label: ReferenceLabel) {
        self.labels.insert(label.transition_id.clone(), label);
    }

    pub fn get(&self, id: &str) -> Option<&ReferenceLabel> {
        self.labels.get(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every manifest transition is labelled exactly once and nothing else is.
    pub fn check_covers(&self, manifest: &DatasetManifest) -> Result<(), ReferenceError> {
        let want: HashSet<&str> = manifest.transitions().map(|t| t.id.as_str()).collect();
        let missing: Vec<String> =
            manifest.transitions().filter(|t| !self.labels.contains_key(&t.id)).map(|t| t.id.clone()).collect();
        let extra: Vec<String> = self.labels.keys().filter(|k| !want.contains(k.as_str())).cloned().collect();
        if missing.is_empty() && extra.is_empty() {
            Ok(())
        } else {
            Err(ReferenceError::Coverage { missing, extra })
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for label in self.labels.values() {
            out.push_str(&serde_json::to_string(label).expect("label serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }

    /// Loads labels. With `allow_partial_tail`, a torn final line (an
    /// interrupted append) is dropped instead of failing.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReferenceError> {
        Self::load_inner(path.as_ref(), false)
    }

    pub fn load_resumable(path: impl AsRef<Path>) -> Result<Self, ReferenceError> {
        Self::load_inner(path.as_ref(), true)
    }

    fn load_inner(path: &Path, allow_partial_tail: bool) -> Result<Self, ReferenceError> {
        let io_err = |source| ReferenceError::Io { path: path.to_path_buf(), source };
        let lines: Vec<String> =
            BufReader::new(File::open(path).map_err(io_err)?).lines().collect::<Result<_, _>>().map_err(io_err)?;
        let mut out = Self::default();
        let last = lines.len();
        for (n, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let label: ReferenceLabel = match serde_json::from_str(line) {
                Ok(l) => l,
                Err(_) if allow_partial_tail && n + 1 == last => break,
                Err(e) => {
                    return Err(ReferenceError::Malformed {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: e.to_string(),
                    })
                }
            };
            if out.labels.contains_key(&label.transition_id) {
                return Err(ReferenceError::Duplicate { path: path.to_path_buf(), id: label.transition_id });
            }
            out.insert(label);
        }
        Ok(out)
    }
}

/// Appends one label line and flushes, for incremental annotation.
pub fn append_reference(path: &Path, label: &ReferenceLabel) -> io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(label).map_err(io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()
}
