//! Deterministic two-room key/door gridworld.
//!
//! The agent starts in one room together with a key. The second room holds
//! the down staircase, which is the goal tile, and is reachable only through
//! a locked door. Task reward is 0 everywhere and 1 on reaching the goal.
//! Subgoal events (key picked up, door unlocked) are detected exactly from
//! state diffs and act as the ground-truth option termination signal.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_PICKUP_MESSAGE: &str = "g - a key named The Master Key of Thievery.";
pub const WALL_MESSAGE: &str = "It's a wall.";
pub const NEVER_MIND_MESSAGE: &str = "Never mind.";

pub const PICKUP_SUBGOAL: &str = "pick up the key";
pub const UNLOCK_SUBGOAL: &str = "open the door";

/// Default cap on episode length for rollouts.
pub const DEFAULT_STEP_CAP: u32 = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("room {which} is {w}x{h}, rooms must be at least 2x2")]
    RoomTooSmall { which: &'static str, w: usize, h: usize },
    #[error("rooms need a {need_w}x{need_h} map but bounds are {max_w}x{max_h}")]
    DoesNotFit { need_w: usize, need_h: usize, max_w: usize, max_h: usize },
    #[error("layout has {found} {what} cell(s), expected exactly one")]
    Count { what: &'static str, found: usize },
    #[error("{what} at {pos} is not on the agent side of the door")]
    WrongSide { what: &'static str, pos: Coord },
    #[error("{what} at {pos} is not in the room behind the door")]
    NotBehindDoor { what: &'static str, pos: Coord },
    #[error("cell {pos} is unreachable from the agent spawn")]
    Unreachable { pos: Coord },
    #[error("invalid scene glyph {glyph:?} at {pos}")]
    BadGlyph { glyph: char, pos: Coord },
    #[error("scene rows have inconsistent widths")]
    Ragged,
    #[error("scene is missing the agent '@'")]
    NoAgent,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("cannot step a terminated episode (agent already on the goal at {0})")]
    Terminated(Coord),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// One cell in `dir`, or `None` when that would leave the non-negative quadrant.
    pub fn offset(self, dx: isize, dy: isize) -> Option<Coord> {
        Some(Coord { x: self.x.checked_add_signed(dx)?, y: self.y.checked_add_signed(dy)? })
    }

    pub fn manhattan(self, other: Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn is_orthogonally_adjacent(self, other: Coord) -> bool {
        self.manhattan(other) == 1
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Wall orientation decides the glyph: corners and horizontal runs are `-`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WallShape {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Floor,
    Wall(WallShape),
    DoorClosed,
    DoorOpen,
    StairsUp,
    StairsDown,
    Void,
}

impl CellKind {
    pub fn is_door(self) -> bool {
        matches!(self, CellKind::DoorClosed | CellKind::DoorOpen)
    }

    /// Single-character code used by the layout serialization. It equals the
    /// display glyph except for an open door, which is stored as `/`.
    pub fn code(self) -> char {
        match self {
            CellKind::Floor => '.',
            CellKind::Wall(WallShape::Horizontal) => '-',
            CellKind::Wall(WallShape::Vertical) => '|',
            CellKind::DoorClosed => '+',
            CellKind::DoorOpen => '/',
            CellKind::StairsUp => '<',
            CellKind::StairsDown => '>',
            CellKind::Void => ' ',
        }
    }

    pub fn from_code(c: char) -> Option<CellKind> {
        Some(match c {
            '.' => CellKind::Floor,
            '-' => CellKind::Wall(WallShape::Horizontal),
            '|' => CellKind::Wall(WallShape::Vertical),
            '+' => CellKind::DoorClosed,
            '/' => CellKind::DoorOpen,
            '<' => CellKind::StairsUp,
            '>' => CellKind::StairsDown,
            ' ' => CellKind::Void,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomSize {
    pub width: usize,
    pub height: usize,
}

/// Procedural generation parameters. Room sizes are fixed per config; key,
/// agent, up-stairs, door row and goal are sampled per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// Interior size of the room the agent starts in.
    pub start_room: RoomSize,
    /// Interior size of the room behind the door.
    pub goal_room: RoomSize,
    /// Largest map the layout may occupy (the game screen scene area).
    pub max_width: usize,
    pub max_height: usize,
    /// Hide the goal room (render it as void) while the door is locked.
    pub conceal_goal_room: bool,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            start_room: RoomSize { width: 5, height: 4 },
            goal_room: RoomSize { width: 4, height: 4 },
            max_width: 79,
            max_height: 21,
            conceal_goal_room: false,
        }
    }
}

/// Static map of one episode.
///
/// `door_pos` and `goal_pos` are optional only so that partially observed
/// scenes (see [`GridLayout::from_ascii`]) can be represented; every
/// generated layout has both and passes [`GridLayout::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLayout {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    concealed: Vec<bool>,
    pub door_pos: Option<Coord>,
    pub goal_pos: Option<Coord>,
    pub key_spawn: Option<Coord>,
    pub agent_spawn: Coord,
}

impl GridLayout {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn cell(&self, c: Coord) -> CellKind {
        if self.in_bounds(c) {
            self.cells[c.y * self.width + c.x]
        } else {
            CellKind::Void
        }
    }

    pub fn is_concealed(&self, c: Coord) -> bool {
        self.in_bounds(c) && self.concealed[c.y * self.width + c.x]
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Coord { x, y }))
    }

    /// Builds a layout from raw parts, deriving the door and goal positions
    /// from the cells. No invariant checking is done.
    pub fn from_parts(
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        concealed: Vec<bool>,
        agent_spawn: Coord,
        key_spawn: Option<Coord>,
    ) -> Result<Self, LayoutError> {
        if cells.len() != width * height || concealed.len() != width * height {
            return Err(LayoutError::Ragged);
        }
        let mut layout =
            Self { width, height, cells, concealed, door_pos: None, goal_pos: None, key_spawn, agent_spawn };
        let door_pos = layout.coords().find(|&c| layout.cell(c).is_door());
        let goal_pos = layout.coords().find(|&c| layout.cell(c) == CellKind::StairsDown);
        layout.door_pos = door_pos;
        layout.goal_pos = goal_pos;
        Ok(layout)
    }

    /// Parses an unseparated glyph scene. `@` marks the agent spawn (floor
    /// underneath), `(` marks the key spawn (floor underneath), `+` a closed
    /// door. Such scenes describe what an observer saw and are not required
    /// to satisfy the generator invariants.
    pub fn from_ascii<S: AsRef<str>>(rows: &[S]) -> Result<Self, LayoutError> {
        let height = rows.len();
        let width = rows.iter().map(|r| r.as_ref().chars().count()).max().unwrap_or(0);
        let mut cells = vec![CellKind::Void; width * height];
        let mut agent = None;
        let mut key = None;
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.as_ref().chars().enumerate() {
                let pos = Coord { x, y };
                let kind = match ch {
                    '@' => {
                        agent = Some(pos);
                        CellKind::Floor
                    }
                    '(' => {
                        key = Some(pos);
                        CellKind::Floor
                    }
                    '/' => return Err(LayoutError::BadGlyph { glyph: ch, pos }),
                    other => CellKind::from_code(other).ok_or(LayoutError::BadGlyph { glyph: ch, pos })?,
                };
                cells[y * width + x] = kind;
            }
        }
        let agent = agent.ok_or(LayoutError::NoAgent)?;
        Self::from_parts(width, height, cells, vec![false; width * height], agent, key)
    }

    /// Marks cells that render as void while the door is still locked.
    pub fn with_concealed(mut self, cells: impl IntoIterator<Item = Coord>) -> Self {
        for c in cells {
            if self.in_bounds(c) {
                self.concealed[c.y * self.width + c.x] = true;
            }
        }
        self
    }

    /// Cell codes row by row; the inverse of [`GridLayout::from_parts`] cells.
    pub fn code_rows(&self) -> Vec<String> {
        (0..self.height).map(|y| (0..self.width).map(|x| self.cell(Coord { x, y }).code()).collect()).collect()
    }

    pub fn concealed_cells(&self) -> Vec<Coord> {
        self.coords().filter(|&c| self.is_concealed(c)).collect()
    }

    /// Whether the agent may stand on `c` given the door state.
    pub fn passable(&self, c: Coord, door_locked: bool) -> bool {
        match self.cell(c) {
            CellKind::Floor | CellKind::StairsUp | CellKind::StairsDown | CellKind::DoorOpen => true,
            CellKind::DoorClosed => !door_locked,
            CellKind::Wall(_) | CellKind::Void => false,
        }
    }

    fn flood(&self, from: Coord, door_locked: bool) -> HashSet<Coord> {
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            for dir in Direction::ALL {
                if let Some(n) = dir.apply(c) {
                    if self.passable(n, door_locked) && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
        seen
    }

    /// Checks every structural invariant of a playable layout.
    pub fn validate(&self) -> Result<(), LayoutError> {
        let count = |pred: &dyn Fn(CellKind) -> bool| self.cells.iter().filter(|&&k| pred(k)).count();
        for (what, found) in [
            ("door", count(&|k| k.is_door())),
            ("down-stairs", count(&|k| k == CellKind::StairsDown)),
            ("up-stairs", count(&|k| k == CellKind::StairsUp)),
        ] {
            if found != 1 {
                return Err(LayoutError::Count { what, found });
            }
        }
        let goal = self.goal_pos.ok_or(LayoutError::Count { what: "down-stairs", found: 0 })?;
        let key = self.key_spawn.ok_or(LayoutError::Count { what: "key", found: 0 })?;
        let near_side = self.flood(self.agent_spawn, true);
        if !near_side.contains(&key) {
            return Err(LayoutError::WrongSide { what: "key", pos: key });
        }
        if near_side.contains(&goal) {
            return Err(LayoutError::NotBehindDoor { what: "goal", pos: goal });
        }
        let all = self.flood(self.agent_spawn, false);
        for c in self.coords() {
            if self.passable(c, false) && !all.contains(&c) {
                return Err(LayoutError::Unreachable { pos: c });
            }
        }
        Ok(())
    }
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: &[Coord], n: usize) -> Vec<Coord> {
    pool.choose_multiple(rng, n).copied().collect()
}

/// Generates a validated layout: two rooms side by side sharing one wall
/// column, with the door somewhere in the shared wall.
pub fn generate_layout(seed: u64, config: &LayoutConfig) -> Result<GridLayout, LayoutError> {
    let (s, g) = (config.start_room, config.goal_room);
    for (which, r) in [("start", s), ("goal", g)] {
        if r.width < 2 || r.height < 2 {
            return Err(LayoutError::RoomTooSmall { which, w: r.width, h: r.height });
        }
    }
    let width = s.width + g.width + 3;
    let height = s.height.max(g.height) + 2;
    if width > config.max_width || height > config.max_height {
        return Err(LayoutError::DoesNotFit {
            need_w: width,
            need_h: height,
            max_w: config.max_width,
            max_h: config.max_height,
        });
    }

    // (x0, y0, x1, y1) wall rectangles, inclusive.
    let shared_x = s.width + 1;
    let rooms = [(0, 0, shared_x, s.height + 1), (shared_x, 0, width - 1, g.height + 1)];
    let mut cells = vec![CellKind::Void; width * height];
    for &(x0, y0, x1, y1) in &rooms {
        for y in y0..=y1 {
            for x in x0..=x1 {
                let idx = y * width + x;
                let on_h = y == y0 || y == y1;
                let on_v = x == x0 || x == x1;
                cells[idx] = if on_h {
                    CellKind::Wall(WallShape::Horizontal)
                } else if on_v {
                    match cells[idx] {
                        CellKind::Wall(WallShape::Horizontal) => cells[idx],
                        _ => CellKind::Wall(WallShape::Vertical),
                    }
                } else {
                    CellKind::Floor
                };
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start_cells: Vec<Coord> = (1..=s.height).flat_map(|y| (1..=s.width).map(move |x| Coord { x, y })).collect();
    let goal_cells: Vec<Coord> =
        (1..=g.height).flat_map(|y| (shared_x + 1..shared_x + 1 + g.width).map(move |x| Coord { x, y })).collect();
    let picks = sample_distinct(&mut rng, &start_cells, 3);
    let (agent, key, up) = (picks[0], picks[1], picks[2]);
    let goal = *goal_cells.choose(&mut rng).expect("goal room is non-empty");
    let door_y = 1 + (rand::Rng::random_range(&mut rng, 0..s.height.min(g.height)));
    let door = Coord { x: shared_x, y: door_y };

    cells[up.y * width + up.x] = CellKind::StairsUp;
    cells[goal.y * width + goal.x] = CellKind::StairsDown;
    cells[door.y * width + door.x] = CellKind::DoorClosed;

    let mut concealed = vec![false; width * height];
    if config.conceal_goal_room {
        let (x0, y0, x1, y1) = rooms[1];
        for y in y0..=y1 {
            for x in (x0 + 1)..=x1 {
                concealed[y * width + x] = true;
            }
        }
    }

    let layout = GridLayout::from_parts(width, height, cells, concealed, agent, Some(key))?;
    layout.validate()?;
    Ok(layout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }

    pub fn apply(self, c: Coord) -> Option<Coord> {
        let (dx, dy) = self.delta();
        c.offset(dx, dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    GoNorth,
    GoEast,
    GoSouth,
    GoWest,
    PickUp,
    Apply,
}

impl Action {
    pub const ALL: [Action; 6] =
        [Action::GoNorth, Action::GoEast, Action::GoSouth, Action::GoWest, Action::PickUp, Action::Apply];

    /// Stable integer encoding used for persistence.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Action::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::GoNorth => "go north",
            Action::GoEast => "go east",
            Action::GoSouth => "go south",
            Action::GoWest => "go west",
            Action::PickUp => "pickup",
            Action::Apply => "apply",
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::GoNorth => Some(Direction::North),
            Action::GoEast => Some(Direction::East),
            Action::GoSouth => Some(Direction::South),
            Action::GoWest => Some(Direction::West),
            Action::PickUp | Action::Apply => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubgoalEvent {
    None,
    KeyPickedUp,
    DoorUnlocked,
}

impl SubgoalEvent {
    pub fn canonical_name(self) -> &'static str {
        match self {
            SubgoalEvent::None => "none",
            SubgoalEvent::KeyPickedUp => PICKUP_SUBGOAL,
            SubgoalEvent::DoorUnlocked => UNLOCK_SUBGOAL,
        }
    }

    pub fn is_achievement(self) -> bool {
        self != SubgoalEvent::None
    }
}

/// Snapshot of an episode. Cheap to clone: the layout is shared.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridState {
    pub layout: Arc<GridLayout>,
    pub agent_pos: Coord,
    pub key_on_floor: Option<Coord>,
    pub key_held: bool,
    pub door_locked: bool,
    pub last_message: String,
    pub step_count: u32,
    pub terminated: bool,
}

impl GridState {
    /// Initial state of an episode on `layout`.
    pub fn initial(layout: Arc<GridLayout>) -> Self {
        let agent_pos = layout.agent_spawn;
        let key_on_floor = layout.key_spawn;
        let terminated = layout.goal_pos == Some(agent_pos);
        Self {
            layout,
            agent_pos,
            key_on_floor,
            key_held: false,
            door_locked: true,
            last_message: String::new(),
            step_count: 0,
            terminated,
        }
    }

    /// Cell as currently observed, with the door reflecting its lock state.
    pub fn effective_cell(&self, c: Coord) -> CellKind {
        match self.layout.cell(c) {
            k if k.is_door() => {
                if self.door_locked {
                    CellKind::DoorClosed
                } else {
                    CellKind::DoorOpen
                }
            }
            k => k,
        }
    }

    pub fn signature(&self) -> StateSignature {
        StateSignature { agent_pos: self.agent_pos, key_held: self.key_held, door_locked: self.door_locked }
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.last_message = message.into();
        self
    }

    /// Checks the per-state invariants (key exclusivity, termination).
    pub fn check(&self) -> bool {
        let key_ok = self.key_held != self.key_on_floor.is_some() || self.layout.key_spawn.is_none();
        let term_ok = self.terminated == (self.layout.goal_pos == Some(self.agent_pos));
        key_ok && term_ok
    }
}

/// Dynamics-relevant part of a state; drops the step counter and message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateSignature {
    pub agent_pos: Coord,
    pub key_held: bool,
    pub door_locked: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub task_reward: u8,
    pub event: SubgoalEvent,
}

/// Advances the environment by one action.
pub fn step(state: &GridState, action: Action) -> Result<StepOutcome, StepError> {
    if state.terminated {
        return Err(StepError::Terminated(state.agent_pos));
    }
    let layout = &state.layout;
    let mut next = state.clone();
    next.step_count += 1;
    next.last_message.clear();
    let mut event = SubgoalEvent::None;

    match action {
        Action::GoNorth | Action::GoEast | Action::GoSouth | Action::GoWest => {
            let dir = action.direction().expect("movement action");
            match dir.apply(state.agent_pos) {
                Some(target) if layout.passable(target, state.door_locked) => next.agent_pos = target,
                _ => next.last_message = WALL_MESSAGE.to_owned(),
            }
        }
        Action::PickUp => {
            if state.key_on_floor == Some(state.agent_pos) {
                next.key_on_floor = None;
                next.key_held = true;
                next.last_message = KEY_PICKUP_MESSAGE.to_owned();
                event = SubgoalEvent::KeyPickedUp;
            }
        }
        Action::Apply => {
            let adjacent = layout.door_pos.is_some_and(|d| d.is_orthogonally_adjacent(state.agent_pos));
            if state.key_held && state.door_locked && adjacent {
                next.door_locked = false;
                event = SubgoalEvent::DoorUnlocked;
            } else {
                next.last_message = NEVER_MIND_MESSAGE.to_owned();
            }
        }
    }

    next.terminated = layout.goal_pos == Some(next.agent_pos);
    let task_reward = u8::from(next.terminated);
    Ok(StepOutcome { state: next, task_reward, event })
}

/// Derives the subgoal event from two snapshots of the same layout.
pub fn detect_event(before: &GridState, after: &GridState) -> SubgoalEvent {
    if !before.key_held && after.key_held {
        SubgoalEvent::KeyPickedUp
    } else if before.door_locked && !after.door_locked {
        SubgoalEvent::DoorUnlocked
    } else {
        SubgoalEvent::None
    }
}

/// Content hash of a layout, hex encoded.
pub fn layout_fingerprint(layout: &GridLayout) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}x{};", layout.width, layout.height));
    for row in layout.code_rows() {
        h.update(row.as_bytes());
        h.update(b"\n");
    }
    for c in layout.concealed_cells() {
        h.update(format!("c{},{};", c.x, c.y));
    }
    h.update(format!("a{:?};k{:?}", layout.agent_spawn, layout.key_spawn.map(|c| (c.x, c.y))));
    hex::encode(h.finalize())
}

/// Stable transition identifier: a hash of the layout, the pre-transition
/// state (without its step counter) and the action.
pub fn transition_id(before: &GridState, action: Action) -> String {
    transition_id_with(&layout_fingerprint(&before.layout), before, action)
}

/// Like [`transition_id`] with a precomputed layout fingerprint.
pub fn transition_id_with(fingerprint: &str, before: &GridState, action: Action) -> String {
    let mut h = Sha256::new();
    h.update(fingerprint.as_bytes());
    h.update(format!(
        "|{},{}|{:?}|{}|{}|{}|{}",
        before.agent_pos.x,
        before.agent_pos.y,
        before.key_on_floor.map(|c| (c.x, c.y)),
        before.key_held,
        before.door_locked,
        before.last_message,
        action.code()
    ));
    hex::encode(&h.finalize()[..8])
}

/// One-step record `(before, action, after)` with its ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub id: String,
    pub before: GridState,
    pub action: Action,
    pub after: GridState,
    pub task_reward: u8,
    pub event: SubgoalEvent,
}

impl Transition {
    pub fn new(before: GridState, action: Action, after: GridState, task_reward: u8, event: SubgoalEvent) -> Self {
        let id = transition_id(&before, action);
        Self { id, before, action, after, task_reward, event }
    }

    /// Steps `before` with `action` and records the result.
    pub fn record(before: &GridState, action: Action) -> Result<Self, StepError> {
        let out = step(before, action)?;
        Ok(Self::new(before.clone(), action, out.state, out.task_reward, out.event))
    }

    /// Whether the stored labels agree with what the snapshots imply.
    pub fn labels_consistent(&self) -> bool {
        detect_event(&self.before, &self.after) == self.event && (self.task_reward == 1) == self.after.terminated
    }
}

/// A directed edge of the reachable state graph.
#[derive(Clone, Debug)]
pub struct Edge {
    pub from: StateSignature,
    pub action: Action,
    pub outcome: StepOutcome,
    pub before: GridState,
}

/// Breadth-first expansion of the state graph from the layout's initial
/// state, over dynamics signatures. Stops after `max_states` expansions.
pub fn explore(layout: &Arc<GridLayout>, max_states: usize) -> Vec<Edge> {
    let start = GridState::initial(Arc::clone(layout));
    let mut seen = HashSet::from([start.signature()]);
    let mut queue = VecDeque::from([start]);
    let mut edges = Vec::new();
    let mut expanded = 0;
    while let Some(state) = queue.pop_front() {
        if expanded >= max_states {
            break;
        }
        expanded += 1;
        if state.terminated {
            continue;
        }
        for action in Action::ALL {
            let outcome = step(&state, action).expect("non-terminated state");
            if seen.insert(outcome.state.signature()) {
                queue.push_back(outcome.state.clone());
            }
            edges.push(Edge { from: state.signature(), action, outcome, before: state.clone() });
        }
    }
    edges
}

/// Shortest action sequence realising key pickup, door unlock and goal, in
/// that order, or `None` if the layout admits no such trajectory.
pub fn solve(layout: &Arc<GridLayout>) -> Option<Vec<Action>> {
    let start = GridState::initial(Arc::clone(layout));
    let mut parent = std::collections::HashMap::new();
    let mut queue = VecDeque::from([start.clone()]);
    parent.insert(start.signature(), None);
    while let Some(state) = queue.pop_front() {
        if state.terminated {
            let mut actions = Vec::new();
            let mut cur = state.signature();
            while let Some(Some((prev, action))) = parent.get(&cur).cloned() {
                actions.push(action);
                cur = prev;
            }
            actions.reverse();
            return Some(actions);
        }
        for action in Action::ALL {
            let out = step(&state, action).ok()?;
            let sig = out.state.signature();
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(sig) {
                e.insert(Some((state.signature(), action)));
                queue.push_back(out.state);
            }
        }
    }
    None
}
