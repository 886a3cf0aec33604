//! Subgoal-termination reward shaping, tabular Q-learning and value
//! iteration on the key-door gridworld.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotators::{AnnotateError, AnnotationVerdict, Annotator, ParseStatus, PositivePolicy};
use crate::keyroom::{
    explore, layout_fingerprint, step, transition_id_with, Action, GridLayout, GridState, StateSignature, StepOutcome,
    Transition, DEFAULT_STEP_CAP,
};
use crate::promptkit::{compose, PromptSpec};

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_EPISODES: usize = 500;
pub const DEFAULT_BONUS: f64 = 1.0;
pub const VI_TOLERANCE: f64 = 1e-10;
pub const ARGMAX_TOLERANCE: f64 = 1e-9;
pub const VI_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("no cached verdict for transition {0}")]
    MissingVerdict(String),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("invalid shaping configuration: {0}")]
    InvalidConfig(String),
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapingMode {
    #[default]
    Additive,
    PotentialBased,
}

impl FromStr for ShapingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive" => Ok(ShapingMode::Additive),
            "potential" | "potential-based" => Ok(ShapingMode::PotentialBased),
            other => Err(format!("unknown shaping mode {other:?} (expected additive or potential)")),
        }
    }
}

/// Verdicts keyed by transition id, e.g. loaded from `verdicts.jsonl`.
#[derive(Clone, Debug, Default)]
pub struct VerdictTable {
    pub verdicts: HashMap<String, AnnotationVerdict>,
}

impl VerdictTable {
    pub fn new(verdicts: impl IntoIterator<Item = AnnotationVerdict>) -> Self {
        Self { verdicts: verdicts.into_iter().map(|v| (v.transition_id.clone(), v)).collect() }
    }
}

/// Queries an annotator during training. Each distinct transition is
/// annotated once; the annotator's response cache makes reruns free.
#[derive(Debug)]
pub struct LiveSource {
    pub annotator: Annotator,
    pub spec: PromptSpec,
    memo: Mutex<HashMap<String, AnnotationVerdict>>,
}

impl LiveSource {
    pub fn new(annotator: Annotator, spec: PromptSpec) -> Self {
        Self { annotator, spec, memo: Mutex::new(HashMap::new()) }
    }

    pub fn verdict(&self, t: &Transition) -> Result<AnnotationVerdict, ShapeError> {
        if let Some(v) = self.memo.lock().expect("memo lock").get(&t.id) {
            return Ok(v.clone());
        }
        let prompt = compose(&self.spec, t).map_err(|e| ShapeError::InvalidConfig(e.to_string()))?;
        let v = self.annotator.annotate(&prompt, t)?;
        self.memo.lock().expect("memo lock").insert(t.id.clone(), v.clone());
        Ok(v)
    }

    pub fn calls(&self) -> usize {
        self.memo.lock().expect("memo lock").len()
    }
}

#[derive(Clone, Debug)]
pub enum TerminationSource {
    Oracle,
    Cached(Arc<VerdictTable>),
    Live(Arc<LiveSource>),
}

#[derive(Clone, Debug)]
pub struct ShapingConfig {
    pub source: TerminationSource,
    pub mode: ShapingMode,
    pub subgoal_bonus: f64,
    pub gamma: f64,
    /// Pay each subgoal's bonus at most once per trajectory.
    pub once_per_trajectory: bool,
    pub policy: PositivePolicy,
}

impl ShapingConfig {
    pub fn oracle() -> Self {
        Self {
            source: TerminationSource::Oracle,
            mode: ShapingMode::Additive,
            subgoal_bonus: DEFAULT_BONUS,
            gamma: DEFAULT_GAMMA,
            once_per_trajectory: true,
            policy: PositivePolicy::LexiconFiltered,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if !(self.subgoal_bonus >= 0.0 && self.subgoal_bonus.is_finite()) {
            return Err(ShapeError::InvalidConfig(format!("bonus must be >= 0, got {}", self.subgoal_bonus)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ShapeError::InvalidConfig(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Number of subgoals achieved so far: key held, door unlocked.
pub fn progress_potential(s: &GridState) -> f64 {
    f64::from(u8::from(s.key_held || !s.door_locked) + u8::from(!s.door_locked))
}

/// Subgoal names the source says terminated at `t`; empty if β = 0.
pub fn fired_subgoals(t: &Transition, cfg: &ShapingConfig) -> Result<Vec<String>, ShapeError> {
    let verdict = match &cfg.source {
        TerminationSource::Oracle => {
            return Ok(if t.event.is_achievement() { vec![t.event.canonical_name().to_owned()] } else { vec![] });
        }
        TerminationSource::Cached(table) => {
            table.verdicts.get(&t.id).cloned().ok_or_else(|| ShapeError::MissingVerdict(t.id.clone()))?
        }
        TerminationSource::Live(live) => live.verdict(t)?,
    };
    if verdict.parse_status == ParseStatus::Unparseable {
        log::warn!("unparseable verdict for transition {}; no bonus", t.id);
        return Ok(vec![]);
    }
    let flags = match cfg.policy {
        PositivePolicy::LexiconFiltered => &verdict.matched_canonical,
        PositivePolicy::AnyTrue => &verdict.subgoal_flags,
    };
    Ok(flags.iter().filter(|(_, &v)| v).map(|(k, _)| k.clone()).collect())
}

/// Stateless shaped reward (no once-per-trajectory guard).
pub fn shaped_reward(t: &Transition, cfg: &ShapingConfig) -> Result<f64, ShapeError> {
    cfg.validate()?;
    let r = f64::from(t.task_reward);
    match cfg.mode {
        ShapingMode::Additive => {
            let beta = !fired_subgoals(t, cfg)?.is_empty();
            Ok(r + if beta { cfg.subgoal_bonus } else { 0.0 })
        }
        ShapingMode::PotentialBased => Ok(r + cfg.gamma * progress_potential(&t.after) - progress_potential(&t.before)),
    }
}

/// Episode-scoped shaper carrying the once-per-trajectory guard.
#[derive(Debug)]
pub struct Shaper {
    pub cfg: ShapingConfig,
    paid: HashSet<String>,
}

impl Shaper {
    pub fn new(cfg: ShapingConfig) -> Result<Self, ShapeError> {
        cfg.validate()?;
        Ok(Self { cfg, paid: HashSet::new() })
    }

    pub fn reset(&mut self) {
        self.paid.clear();
    }

    pub fn reward(&mut self, t: &Transition) -> Result<f64, ShapeError> {
        if self.cfg.mode == ShapingMode::PotentialBased {
            return shaped_reward(t, &self.cfg);
        }
        let fired = fired_subgoals(t, &self.cfg)?;
        let fresh = if self.cfg.once_per_trajectory {
            fired.into_iter().filter(|name| self.paid.insert(name.clone())).count() > 0
        } else {
            !fired.is_empty()
        };
        Ok(f64::from(t.task_reward) + if fresh { self.cfg.subgoal_bonus } else { 0.0 })
    }
}

// ---- value iteration -----------------------------------------------------

#[derive(Clone, Debug)]
pub struct ValueTable {
    pub states: Vec<StateSignature>,
    pub values: Vec<f64>,
    /// Argmax action set per state; empty for terminal states.
    pub optimal: Vec<Vec<Action>>,
    pub iterations: usize,
    index: HashMap<StateSignature, usize>,
}

impl ValueTable {
    pub fn value(&self, s: &StateSignature) -> Option<f64> {
        self.index.get(s).map(|&i| self.values[i])
    }

    pub fn optimal_actions(&self, s: &StateSignature) -> Option<&[Action]> {
        self.index.get(s).map(|&i| self.optimal[i].as_slice())
    }
}

pub fn sparse_reward(_before: &GridState, _action: Action, out: &StepOutcome) -> f64 {
    f64::from(out.task_reward)
}

/// Sparse reward plus the progress-potential term.
pub fn potential_reward(gamma: f64) -> impl Fn(&GridState, Action, &StepOutcome) -> f64 {
    move |before, _, out| {
        f64::from(out.task_reward) + gamma * progress_potential(&out.state) - progress_potential(before)
    }
}

/// Synchronous value iteration over every reachable state of `layout`.
/// Terminal states are absorbing with value 0.
pub fn value_iteration<F>(layout: &Arc<GridLayout>, reward: F, gamma: f64) -> Result<ValueTable, ShapeError>
where
    F: Fn(&GridState, Action, &StepOutcome) -> f64,
{
    let edges = explore(layout, usize::MAX);
    let mut index: HashMap<StateSignature, usize> = HashMap::new();
    let mut states = Vec::new();
    let start = GridState::initial(Arc::clone(layout)).signature();
    for sig in std::iter::once(start).chain(edges.iter().flat_map(|e| [e.from, e.outcome.state.signature()])) {
        index.entry(sig).or_insert_with(|| {
            states.push(sig);
            states.len() - 1
        });
    }
    let n = states.len();
    // Per state: (action, next index, reward, next is terminal).
    let mut moves: Vec<Vec<(Action, usize, f64, bool)>> = vec![Vec::new(); n];
    for e in &edges {
        let from = index[&e.from];
        let to = index[&e.outcome.state.signature()];
        moves[from].push((e.action, to, reward(&e.before, e.action, &e.outcome), e.outcome.state.terminated));
    }
    let q = |values: &[f64], &(_, to, r, terminal): &(Action, usize, f64, bool)| {
        r + if terminal { 0.0 } else { gamma * values[to] }
    };
    let mut values = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut residual: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let v = moves[i].iter().map(|m| q(&values, m)).fold(f64::NEG_INFINITY, f64::max);
                let v = if moves[i].is_empty() { 0.0 } else { v };
                residual = residual.max((v - values[i]).abs());
                v
            })
            .collect();
        values = next;
        if residual <= VI_TOLERANCE {
            break;
        }
        if iterations >= VI_MAX_ITERATIONS {
            return Err(ShapeError::NonConvergence { iterations, residual });
        }
    }
    let optimal = (0..n)
        .map(|i| {
            let best = moves[i].iter().map(|m| q(&values, m)).fold(f64::NEG_INFINITY, f64::max);
            moves[i].iter().filter(|m| q(&values, m) >= best - ARGMAX_TOLERANCE).map(|m| m.0).collect()
        })
        .collect();
    Ok(ValueTable { states, values, optimal, iterations, index })
}

// ---- Q-learning ----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub decay_fraction: f64,
    pub episodes: usize,
    pub step_cap: u32,
}

impl Default for QParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.6,
            episodes: DEFAULT_EPISODES,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

impl QParams {
    pub fn epsilon(&self, episode: usize) -> f64 {
        let horizon = (self.episodes as f64 * self.decay_fraction).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Clone, Debug, Default)]
pub struct QTable {
    values: HashMap<StateSignature, [f64; 6]>,
}

impl QTable {
    pub fn get(&self, s: &StateSignature) -> [f64; 6] {
        self.values.get(s).copied().unwrap_or([0.0; 6])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn entry(&mut self, s: StateSignature) -> &mut [f64; 6] {
        self.values.entry(s).or_insert([0.0; 6])
    }

    /// Greedy action with uniform tie-breaking.
    pub fn greedy(&self, s: &StateSignature, rng: &mut ChaCha8Rng) -> Action {
        let q = self.get(s);
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..6).filter(|&i| q[i] == best).collect();
        Action::ALL[ties[rng.random_range(0..ties.len())]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Undiscounted task return.
    #[serde(rename = "return")]
    pub ret: f64,
    pub shaped_return: f64,
    pub steps: u32,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub arm: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeStats>,
}

impl LearningCurve {
    /// 1-based index of the first successful episode.
    pub fn episodes_to_first_success(&self) -> Option<usize> {
        self.episodes.iter().position(|e| e.success).map(|i| i + 1)
    }

    pub fn success_rate_last(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|e| e.success).count() as f64 / tail.len() as f64
    }
}

impl fmt::Display for LearningCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "arm={} seed={} first_success={:?} last100={:.2}",
            self.arm,
            self.seed,
            self.episodes_to_first_success(),
            self.success_rate_last(100)
        )
    }
}

/// One-step Q-learning with epsilon-greedy exploration. With `shaping`
/// set to `None` the agent learns from the task reward alone.
pub fn q_learn(
    layout: &Arc<GridLayout>,
    shaping: Option<&ShapingConfig>,
    params: &QParams,
    run_seed: u64,
    arm: &str,
) -> Result<(LearningCurve, QTable), ShapeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut shaper = shaping.map(|cfg| Shaper::new(cfg.clone())).transpose()?;
    let fingerprint = layout_fingerprint(layout);
    let mut table = QTable::default();
    let mut episodes = Vec::with_capacity(params.episodes);
    for episode in 0..params.episodes {
        let epsilon = params.epsilon(episode);
        if let Some(s) = shaper.as_mut() {
            s.reset();
        }
        let mut state = GridState::initial(Arc::clone(layout));
        let (mut ret, mut shaped_return) = (0.0, 0.0);
        while !state.terminated && state.step_count < params.step_cap {
            let sig = state.signature();
            let action = if rng.random::<f64>() < epsilon {
                Action::ALL[rng.random_range(0..Action::ALL.len())]
            } else {
                table.greedy(&sig, &mut rng)
            };
            let out = step(&state, action).expect("episode is live");
            let task = f64::from(out.task_reward);
            let reward = match shaper.as_mut() {
                None => task,
                Some(shaper) => {
                    let t = Transition {
                        id: transition_id_with(&fingerprint, &state, action),
                        before: state.clone(),
                        action,
                        after: out.state.clone(),
                        task_reward: out.task_reward,
                        event: out.event,
                    };
                    shaper.reward(&t)?
                }
            };
            ret += task;
            shaped_return += reward;
            let next_sig = out.state.signature();
            let target = if out.state.terminated {
                reward
            } else {
                reward + params.gamma * table.get(&next_sig).iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let q = &mut table.entry(sig)[action.code() as usize];
            *q += params.alpha * (target - *q);
            state = out.state;
        }
        episodes.push(EpisodeStats { episode, ret, shaped_return, steps: state.step_count, success: state.terminated });
    }
    Ok((LearningCurve { arm: arm.to_owned(), seed: run_seed, episodes }, table))
}

/// CSV with columns episode, return, steps, success, arm, seed.
pub fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "return", "steps", "success", "arm", "seed"]).expect("in-memory csv write");
    for c in curves {
        for e in &c.episodes {
            w.write_record([
                e.episode.to_string(),
                e.ret.to_string(),
                e.steps.to_string(),
                u8::from(e.success).to_string(),
                c.arm.clone(),
                c.seed.to_string(),
            ])
            .expect("in-memory csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotators::{AnnotatorBackend, MockScript};
    use crate::keyroom::{generate_layout, solve, LayoutConfig, SubgoalEvent};
    use crate::promptkit::SubgoalMode;
    use crate::textview::ViewKind;

    fn layout() -> Arc<GridLayout> {
        Arc::new(generate_layout(0, &LayoutConfig::default()).unwrap())
    }

    fn trajectory(layout: &Arc<GridLayout>) -> Vec<Transition> {
        let mut s = GridState::initial(Arc::clone(layout));
        let mut out = Vec::new();
        for a in solve(layout).unwrap() {
            let t = Transition::record(&s, a).unwrap();
            s = t.after.clone();
            out.push(t);
        }
        out
    }

    #[test]
    fn additive_oracle_examples() {
        let l = layout();
        let traj = trajectory(&l);
        let cfg = ShapingConfig::oracle();
        let pickup = traj.iter().find(|t| t.event == SubgoalEvent::KeyPickedUp).unwrap();
        assert_eq!(shaped_reward(pickup, &cfg).unwrap(), 1.0);
        let last = traj.last().unwrap();
        assert_eq!((last.task_reward, last.event), (1, SubgoalEvent::None));
        assert_eq!(shaped_reward(last, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn potential_examples() {
        let l = layout();
        let traj = trajectory(&l);
        let cfg = ShapingConfig { mode: ShapingMode::PotentialBased, gamma: 1.0, ..ShapingConfig::oracle() };
        let pickup = traj.iter().find(|t| t.event == SubgoalEvent::KeyPickedUp).unwrap();
        assert_eq!(shaped_reward(pickup, &cfg).unwrap(), 1.0);
        let aux: f64 = traj.iter().map(|t| shaped_reward(t, &cfg).unwrap() - f64::from(t.task_reward)).sum();
        assert_eq!(aux, 2.0);
    }

    #[test]
    fn guard_pays_once() {
        let l = layout();
        let pickup = trajectory(&l).into_iter().find(|t| t.event == SubgoalEvent::KeyPickedUp).unwrap();
        let mut guarded = Shaper::new(ShapingConfig::oracle()).unwrap();
        assert_eq!(guarded.reward(&pickup).unwrap(), 1.0);
        assert_eq!(guarded.reward(&pickup).unwrap(), 0.0);
        guarded.reset();
        assert_eq!(guarded.reward(&pickup).unwrap(), 1.0);
        let mut open = Shaper::new(ShapingConfig { once_per_trajectory: false, ..ShapingConfig::oracle() }).unwrap();
        assert_eq!(open.reward(&pickup).unwrap(), 1.0);
        assert_eq!(open.reward(&pickup).unwrap(), 1.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = ShapingConfig { subgoal_bonus: -1.0, ..ShapingConfig::oracle() };
        assert!(Shaper::new(bad).is_err());
        let bad = ShapingConfig { gamma: 1.5, ..ShapingConfig::oracle() };
        assert!(Shaper::new(bad).is_err());
    }

    #[test]
    fn cached_source_matches_oracle_and_reports_missing() {
        let l = layout();
        let traj = trajectory(&l);
        let spec = PromptSpec::new(ViewKind::Cropped, SubgoalMode::canonical());
        let oracle = Annotator::new(AnnotatorBackend::Oracle);
        let verdicts: Vec<_> = traj.iter().map(|t| oracle.annotate(&compose(&spec, t).unwrap(), t).unwrap()).collect();
        let cached = ShapingConfig {
            source: TerminationSource::Cached(Arc::new(VerdictTable::new(verdicts))),
            ..ShapingConfig::oracle()
        };
        for t in &traj {
            assert_eq!(shaped_reward(t, &cached).unwrap(), shaped_reward(t, &ShapingConfig::oracle()).unwrap());
        }
        let empty = ShapingConfig { source: TerminationSource::Cached(Arc::default()), ..ShapingConfig::oracle() };
        assert!(matches!(shaped_reward(&traj[0], &empty), Err(ShapeError::MissingVerdict(_))));
    }

    #[test]
    fn live_source_calls_once_per_transition() {
        let l = layout();
        let traj = trajectory(&l);
        let annotator = Annotator::new(AnnotatorBackend::Mock(Arc::new(MockScript::constant("no dictionary"))));
        let live = Arc::new(LiveSource::new(annotator, PromptSpec::new(ViewKind::Cropped, SubgoalMode::canonical())));
        let cfg = ShapingConfig { source: TerminationSource::Live(live.clone()), ..ShapingConfig::oracle() };
        for _ in 0..3 {
            for t in &traj {
                assert_eq!(shaped_reward(t, &cfg).unwrap(), f64::from(t.task_reward));
            }
        }
        assert_eq!(live.calls(), traj.len());
    }

    #[test]
    fn gamma_zero_values_are_best_one_step_reward() {
        let l = layout();
        let vt = value_iteration(&l, sparse_reward, 0.0).unwrap();
        let edges = explore(&l, usize::MAX);
        for (i, s) in vt.states.iter().enumerate() {
            let best =
                edges.iter().filter(|e| e.from == *s).map(|e| f64::from(e.outcome.task_reward)).fold(0.0, f64::max);
            assert_eq!(vt.values[i], best);
        }
    }

    #[test]
    fn optimal_first_move_heads_for_key() {
        let l = layout();
        let vt = value_iteration(&l, sparse_reward, DEFAULT_GAMMA).unwrap();
        let start = GridState::initial(Arc::clone(&l));
        let key = l.key_spawn.unwrap();
        for &a in vt.optimal_actions(&start.signature()).unwrap() {
            let next = step(&start, a).unwrap().state;
            assert!(next.agent_pos.manhattan(key) < start.agent_pos.manhattan(key), "{a:?}");
        }
    }

    #[test]
    fn epsilon_schedule() {
        let p = QParams::default();
        assert_eq!(p.epsilon(0), 1.0);
        assert!((p.epsilon(300) - 0.05).abs() < 1e-12);
        assert!((p.epsilon(499) - 0.05).abs() < 1e-12);
        assert!((p.epsilon(150) - 0.525).abs() < 1e-12);
    }

    #[test]
    fn q_learning_is_deterministic_and_zero_bonus_matches_sparse() {
        let l = layout();
        let params = QParams { episodes: 60, ..QParams::default() };
        let (a, _) = q_learn(&l, None, &params, 3, "sparse").unwrap();
        let (b, _) = q_learn(&l, None, &params, 3, "sparse").unwrap();
        assert_eq!(a, b);
        let zero = ShapingConfig { subgoal_bonus: 0.0, ..ShapingConfig::oracle() };
        let (c, qa) = q_learn(&l, Some(&zero), &params, 3, "sparse").unwrap();
        let (_, qb) = q_learn(&l, None, &params, 3, "sparse").unwrap();
        assert_eq!(a.episodes, c.episodes);
        assert_eq!(qa.values, qb.values);
        let csv = curves_csv(&[a]);
        assert!(csv.starts_with("episode,return,steps,success,arm,seed\n"));
        assert_eq!(csv.lines().count(), 61);
    }

    #[test]
    fn median_of_values() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
