//! Text observations of a [`GridState`]: a 9x9 agent-centred crop and the
//! full game screen with message and status lines.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::keyroom::{CellKind, Coord, GridState, Transition, WallShape};

pub const CROP_SIZE: usize = 9;
pub const SCREEN_ROWS: usize = 21;
pub const SCREEN_COLS: usize = 79;
/// Terminal width used to pad the message and status lines.
pub const TTY_COLS: usize = 80;

pub const STATUS_LINE_1: &str = "Agent the Footpad              St:14 Dx:17 Co:17 In:9 Wi:11 Ch:7 Chaotic S:0";
pub const STATUS_LINE_2: &str = "Dlvl:1 $:0 HP:12(12) Pw:2(2) AC:7 Xp:1/0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Cropped,
    GameScreen,
}

impl ViewKind {
    pub fn name(self) -> &'static str {
        match self {
            ViewKind::Cropped => "cropped",
            ViewKind::GameScreen => "gamescreen",
        }
    }
}

impl FromStr for ViewKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cropped" | "crop" => Ok(ViewKind::Cropped),
            "gamescreen" | "game-screen" | "human" => Ok(ViewKind::GameScreen),
            other => Err(format!("unknown view {other:?} (expected cropped or gamescreen)")),
        }
    }
}

/// Glyph table for cells and the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolMap {
    pub floor: char,
    pub vertical_wall: char,
    pub horizontal_wall: char,
    pub door_closed: char,
    pub door_open: char,
    pub item: char,
    pub stairs_up: char,
    pub stairs_down: char,
    pub agent: char,
    pub void: char,
}

impl Default for SymbolMap {
    fn default() -> Self {
        Self {
            floor: '.',
            vertical_wall: '|',
            horizontal_wall: '-',
            door_closed: '+',
            door_open: '|',
            item: '(',
            stairs_up: '<',
            stairs_down: '>',
            agent: '@',
            void: ' ',
        }
    }
}

impl SymbolMap {
    pub fn cell(&self, kind: CellKind) -> char {
        match kind {
            CellKind::Floor => self.floor,
            CellKind::Wall(WallShape::Vertical) => self.vertical_wall,
            CellKind::Wall(WallShape::Horizontal) => self.horizontal_wall,
            CellKind::DoorClosed => self.door_closed,
            CellKind::DoorOpen => self.door_open,
            CellKind::StairsUp => self.stairs_up,
            CellKind::StairsDown => self.stairs_down,
            CellKind::Void => self.void,
        }
    }

    /// Glyph shown at `c`: agent over key over terrain. Concealed cells are
    /// void while the door is locked.
    pub fn glyph_at(&self, state: &GridState, c: Coord) -> char {
        if c == state.agent_pos {
            self.agent
        } else if state.door_locked && state.layout.is_concealed(c) {
            self.void
        } else if state.key_on_floor == Some(c) {
            self.item
        } else {
            self.cell(state.effective_cell(c))
        }
    }
}

/// A rendered observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationText {
    /// Crop: the nine grid rows. Game screen: message line, 21 scene rows,
    /// two status lines.
    pub lines: Vec<String>,
    pub view: ViewKind,
    pub separator: bool,
    pub message: String,
    pub includes_stats: bool,
}

impl ObservationText {
    /// The grid rows only.
    pub fn grid_rows(&self) -> &[String] {
        match self.view {
            ViewKind::Cropped => &self.lines,
            ViewKind::GameScreen => &self.lines[1..1 + SCREEN_ROWS],
        }
    }

    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}

/// Placement and status text of the game screen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScreenConfig {
    /// Screen cell of the layout's top-left corner. `None` centres the
    /// layout horizontally on column 39 and vertically on row 10.
    pub origin: Option<Coord>,
    pub status_lines: [String; 2],
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { origin: None, status_lines: [STATUS_LINE_1.to_owned(), STATUS_LINE_2.to_owned()] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Renderer {
    pub symbols: SymbolMap,
    pub screen: ScreenConfig,
}

fn join_cells(cells: impl Iterator<Item = char>, separator: bool) -> String {
    let mut out = String::new();
    for (i, c) in cells.enumerate() {
        if separator && i > 0 {
            out.push(' ');
        }
        out.push(c);
    }
    out
}

fn pad(line: &str, width: usize) -> String {
    format!("{line:<width$}")
}

impl Renderer {
    pub fn with_origin(origin: Coord) -> Self {
        Self { screen: ScreenConfig { origin: Some(origin), ..ScreenConfig::default() }, ..Self::default() }
    }

    fn origin_for(&self, state: &GridState) -> Coord {
        self.screen.origin.unwrap_or_else(|| Coord {
            x: 39usize.saturating_sub(state.layout.width() / 2),
            y: 10usize.saturating_sub(state.layout.height() / 2),
        })
    }

    pub fn render(&self, state: &GridState, view: ViewKind, separator: bool) -> ObservationText {
        match view {
            ViewKind::Cropped => self.render_crop(state, separator),
            ViewKind::GameScreen => self.render_screen(state, separator),
        }
    }

    fn render_crop(&self, state: &GridState, separator: bool) -> ObservationText {
        let half = (CROP_SIZE / 2) as isize;
        let lines = (-half..=half)
            .map(|dy| {
                let cells = (-half..=half).map(|dx| {
                    state.agent_pos.offset(dx, dy).map_or(self.symbols.void, |c| self.symbols.glyph_at(state, c))
                });
                join_cells(cells, separator)
            })
            .collect();
        ObservationText {
            lines,
            view: ViewKind::Cropped,
            separator,
            message: state.last_message.clone(),
            includes_stats: false,
        }
    }

    fn render_screen(&self, state: &GridState, separator: bool) -> ObservationText {
        let origin = self.origin_for(state);
        let mut lines = Vec::with_capacity(SCREEN_ROWS + 3);
        lines.push(pad(&state.last_message, TTY_COLS));
        for row in 0..SCREEN_ROWS {
            let cells = (0..SCREEN_COLS).map(|col| match (col.checked_sub(origin.x), row.checked_sub(origin.y)) {
                (Some(x), Some(y)) => self.symbols.glyph_at(state, Coord { x, y }),
                _ => self.symbols.void,
            });
            lines.push(join_cells(cells, separator));
        }
        for status in &self.screen.status_lines {
            lines.push(pad(status, TTY_COLS));
        }
        ObservationText {
            lines,
            view: ViewKind::GameScreen,
            separator,
            message: state.last_message.clone(),
            includes_stats: true,
        }
    }

    /// One observation block headed by `Time: <t>`.
    fn block(&self, out: &mut String, time: u32, state: &GridState, view: ViewKind, separator: bool) {
        let obs = self.render(state, view, separator);
        let _ = writeln!(out, "Time: {time}");
        match view {
            ViewKind::Cropped => {
                let _ = writeln!(out, "Current message: {}", obs.message);
                out.push('\n');
            }
            ViewKind::GameScreen => out.push('\n'),
        }
        out.push_str(&obs.lines.join("\n"));
    }

    /// The two-step transition text placed between the gameplay markers.
    /// Has no trailing newline.
    pub fn render_transition(&self, t: &Transition, view: ViewKind, separator: bool, include_action: bool) -> String {
        let mut out = String::new();
        self.block(&mut out, 0, &t.before, view, separator);
        out.push('\n');
        if include_action {
            let _ = writeln!(out, "Action: {}", t.action.name());
        }
        self.block(&mut out, 1, &t.after, view, separator);
        out
    }
}

/// Renders with the default symbols and screen placement.
pub fn render(state: &GridState, view: ViewKind, separator: bool) -> ObservationText {
    Renderer::default().render(state, view, separator)
}

pub fn render_transition(t: &Transition, view: ViewKind, separator: bool, include_action: bool) -> String {
    Renderer::default().render_transition(t, view, separator, include_action)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::keyroom::{explore, generate_layout, Action, GridLayout, LayoutConfig};

    /// What can be read back from a crop.
    #[derive(Debug, PartialEq)]
    struct CropReading {
        agent_cell: (usize, usize),
        key_visible: bool,
        door_glyph: Option<char>,
    }

    fn read_crop(obs: &ObservationText) -> CropReading {
        let grid: Vec<Vec<char>> = obs
            .lines
            .iter()
            .map(|l| if obs.separator { l.chars().step_by(2).collect() } else { l.chars().collect() })
            .collect();
        let mut agent = None;
        let mut key = false;
        let mut door = None;
        for (r, row) in grid.iter().enumerate() {
            for (c, &g) in row.iter().enumerate() {
                match g {
                    '@' => agent = Some((r, c)),
                    '(' => key = true,
                    '+' => door = Some('+'),
                    _ => {}
                }
            }
        }
        CropReading { agent_cell: agent.unwrap(), key_visible: key, door_glyph: door }
    }

    fn layout(seed: u64) -> Arc<GridLayout> {
        Arc::new(generate_layout(seed, &LayoutConfig::default()).unwrap())
    }

    #[test]
    fn crop_geometry() {
        let s = GridState::initial(layout(0));
        let sep = render(&s, ViewKind::Cropped, true);
        assert_eq!(sep.lines.len(), 9);
        assert!(sep.lines.iter().all(|l| l.chars().count() == 17));
        let tight = render(&s, ViewKind::Cropped, false);
        assert!(tight.lines.iter().all(|l| l.chars().count() == 9));
        assert_eq!(render(&s, ViewKind::Cropped, true), sep);
    }

    #[test]
    fn screen_geometry() {
        let s = GridState::initial(layout(1));
        let obs = render(&s, ViewKind::GameScreen, true);
        assert_eq!(obs.lines.len(), SCREEN_ROWS + 3);
        assert!(obs.grid_rows().iter().all(|l| l.chars().count() == 2 * SCREEN_COLS - 1));
        assert_eq!(obs.lines.last().unwrap().trim_end(), STATUS_LINE_2);
        let agents: usize = obs.grid_rows().iter().map(|l| l.matches('@').count()).sum();
        assert_eq!(agents, 1);
    }

    #[test]
    fn separator_spacing() {
        let s = GridState::initial(layout(2));
        let obs = render(&s, ViewKind::Cropped, true);
        for line in &obs.lines {
            for (i, ch) in line.chars().enumerate() {
                if i % 2 == 1 {
                    assert_eq!(ch, ' ');
                }
            }
        }
    }

    #[test]
    fn adjacent_door_without_separator() {
        let l = layout(3);
        let door = l.door_pos.unwrap();
        let mut s = GridState::initial(Arc::clone(&l));
        s.agent_pos = Coord::new(door.x - 1, door.y);
        let obs = render(&s, ViewKind::Cropped, false);
        assert!(obs.lines[4].contains("@+"), "{:?}", obs.lines);
    }

    #[test]
    fn parse_back_over_reachable_states() {
        for seed in 0..5 {
            let l = layout(seed);
            for e in explore(&l, 10_000) {
                let s = &e.outcome.state;
                let obs = render(s, ViewKind::Cropped, seed % 2 == 0);
                let reading = read_crop(&obs);
                assert_eq!(reading.agent_cell, (4, 4));
                let door = l.door_pos.unwrap();
                let door_in_view = door.x.abs_diff(s.agent_pos.x) <= 4 && door.y.abs_diff(s.agent_pos.y) <= 4;
                assert_eq!(reading.door_glyph.is_some(), s.door_locked && door_in_view);
                let key_in_view = s.key_on_floor.is_some_and(|k| {
                    k != s.agent_pos && k.x.abs_diff(s.agent_pos.x) <= 4 && k.y.abs_diff(s.agent_pos.y) <= 4
                });
                assert_eq!(reading.key_visible, key_in_view);
            }
        }
    }

    #[test]
    fn status_lines_are_constant() {
        let l = layout(4);
        let s0 = GridState::initial(Arc::clone(&l));
        let s1 = crate::keyroom::step(&s0, Action::GoNorth).unwrap().state;
        let a = render(&s0, ViewKind::GameScreen, true);
        let b = render(&s1, ViewKind::GameScreen, true);
        assert_eq!(a.lines[22..], b.lines[22..]);
    }

    #[test]
    fn transition_blocks() {
        let l = layout(0);
        let s = GridState::initial(Arc::clone(&l));
        let t = Transition::record(&s, Action::PickUp).unwrap();
        let text = render_transition(&t, ViewKind::Cropped, true, false);
        assert_eq!(text.matches("Time:").count(), 2);
        assert!(!text.contains("Action:"));
        let with_action = render_transition(&t, ViewKind::Cropped, true, true);
        assert!(with_action.contains("Action: pickup"));
        let screen = render_transition(&t, ViewKind::GameScreen, true, false);
        assert!(screen.len() > text.len());
    }

    #[test]
    fn concealed_cells_show_after_unlock() {
        let cfg = LayoutConfig { conceal_goal_room: true, ..LayoutConfig::default() };
        let l = Arc::new(generate_layout(0, &cfg).unwrap());
        let mut s = GridState::initial(Arc::clone(&l));
        let locked = render(&s, ViewKind::GameScreen, false);
        assert!(!locked.lines.iter().any(|r| r.contains('>')));
        s.door_locked = false;
        s.key_held = true;
        s.key_on_floor = None;
        let open = render(&s, ViewKind::GameScreen, false);
        assert!(open.lines.iter().any(|r| r.contains('>')));
    }
}
