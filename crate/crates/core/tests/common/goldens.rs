#![allow(dead_code)]

//! Rebuilds the transitions shown in the reference prompts and composes
//! them again.

use std::path::PathBuf;
use std::sync::Arc;

use subgoal_critic::keyroom::{Action, CellKind, Coord, GridLayout, GridState, SubgoalEvent, Transition, WallShape};
use subgoal_critic::promptkit::{compose, compose_with, find_config};
use subgoal_critic::textview::{Renderer, ViewKind};

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Lines with trailing whitespace dropped and trailing blank lines removed.
pub fn normalise(text: &str) -> Vec<String> {
    let mut lines: Vec<String> = text.lines().map(|l| l.trim_end().to_owned()).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

pub fn assert_same(actual: &str, expected: &str) {
    let (a, e) = (normalise(actual), normalise(expected));
    for (i, (x, y)) in a.iter().zip(&e).enumerate() {
        assert_eq!(x, y, "line {} differs", i + 1);
    }
    assert_eq!(a.len(), e.len(), "line count differs");
}

pub struct Frame {
    pub message: String,
    pub grid: Vec<Vec<char>>,
}

/// Splits the gameplay section into its two frames.
pub fn frames(prompt: &str, view: ViewKind, separator: bool) -> [Frame; 2] {
    let lines: Vec<&str> = prompt.lines().collect();
    let start = lines.iter().position(|l| *l == "<gameplay>").unwrap() + 1;
    let decode = |row: &str, width: usize| -> Vec<char> {
        let chars: Vec<char> = row.chars().collect();
        let mut cells: Vec<char> = if separator { chars.iter().step_by(2).copied().collect() } else { chars };
        cells.resize(width, ' ');
        cells
    };
    let mut out = Vec::new();
    let mut i = start;
    for t in 0..2 {
        assert_eq!(lines[i], format!("Time: {t}"));
        let (message, first_row, rows, width) = match view {
            ViewKind::Cropped => {
                let msg = lines[i + 1].strip_prefix("Current message: ").unwrap_or("").to_owned();
                (msg, i + 3, 9, 9)
            }
            ViewKind::GameScreen => (lines[i + 2].trim_end().to_owned(), i + 3, 21, 79),
        };
        let grid = lines[first_row..first_row + rows].iter().map(|r| decode(r, width)).collect();
        out.push(Frame { message, grid });
        i = first_row + rows + if view == ViewKind::GameScreen { 2 } else { 0 };
    }
    let [a, b]: [Frame; 2] = out.try_into().ok().unwrap();
    [a, b]
}

fn find(grid: &[Vec<char>], glyph: char) -> Option<(usize, usize)> {
    grid.iter().enumerate().find_map(|(y, row)| row.iter().position(|&g| g == glyph).map(|x| (x, y)))
}

fn cell_of(glyph: char) -> CellKind {
    match glyph {
        '.' | '@' | '(' => CellKind::Floor,
        '|' => CellKind::Wall(WallShape::Vertical),
        '-' => CellKind::Wall(WallShape::Horizontal),
        '<' => CellKind::StairsUp,
        '>' => CellKind::StairsDown,
        '+' => CellKind::DoorClosed,
        ' ' => CellKind::Void,
        other => panic!("unexpected glyph {other:?}"),
    }
}

const MARGIN: usize = 12;

/// Reassembles the scene behind two frames and the transition between them.
/// Crops are agent-centred, so the displacement between frames is the one
/// that makes their overlap agree.
pub fn rebuild(frames: &[Frame; 2], view: ViewKind) -> (Transition, Option<Coord>) {
    let a0 = find(&frames[0].grid, '@').unwrap();
    let a1 = find(&frames[1].grid, '@').unwrap();
    let (h, w) = (frames[0].grid.len(), frames[0].grid[0].len());
    let shift = match view {
        ViewKind::GameScreen => (0isize, 0isize),
        ViewKind::Cropped => *[(0, 0), (0, -1), (1, 0), (0, 1), (-1, 0)]
            .iter()
            .max_by_key(|(dx, dy)| {
                let mut score = 0i64;
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let (x1, y1) = (x - dx, y - dy);
                        if x1 < 0 || y1 < 0 || x1 >= w as isize || y1 >= h as isize {
                            continue;
                        }
                        let g0 = frames[0].grid[y as usize][x as usize];
                        let g1 = frames[1].grid[y1 as usize][x1 as usize];
                        if g0 == '@' || g1 == '@' || g0 == ' ' || g1 == ' ' {
                            continue;
                        }
                        score += if g0 == g1 { 1 } else { -10 };
                    }
                }
                score
            })
            .unwrap(),
    };
    // Frame 0 occupies [margin, margin + w); frame 1 is offset by -shift.
    let margin = if view == ViewKind::GameScreen { 0 } else { MARGIN };
    let (gw, gh) = (w + 2 * margin, h + 2 * margin);
    let to_global = |frame: usize, x: usize, y: usize| -> Coord {
        let (dx, dy) = if frame == 0 { (0, 0) } else { (shift.0, shift.1) };
        Coord::new((x as isize + margin as isize + dx) as usize, (y as isize + margin as isize + dy) as usize)
    };
    let mut seen: Vec<[char; 2]> = vec![[' ', ' ']; gw * gh];
    let mut covered = vec![[false, false]; gw * gh];
    for (f, frame) in frames.iter().enumerate() {
        for (y, row) in frame.grid.iter().enumerate() {
            for (x, &g) in row.iter().enumerate() {
                let c = to_global(f, x, y);
                seen[c.y * gw + c.x][f] = g;
                covered[c.y * gw + c.x][f] = true;
            }
        }
    }
    let agent0 = to_global(0, a0.0, a0.1);
    let agent1 = to_global(1, a1.0, a1.1);
    let mut cells = vec![CellKind::Void; gw * gh];
    let mut concealed = vec![false; gw * gh];
    let mut key = None;
    let mut door_opened = false;
    for i in 0..gw * gh {
        let [g0, g1] = seen[i];
        let pos = Coord::new(i % gw, i / gw);
        if g0 == '(' {
            key = Some(pos);
        }
        let g = match (g0, g1) {
            ('+', '|') => {
                door_opened = true;
                '+'
            }
            ('@', '@') => '.',
            ('@', other) => other,
            (other, '@') => other,
            (' ', other) if covered[i][0] && other != ' ' => {
                concealed[i] = true;
                other
            }
            (' ', other) => other,
            (other, _) => other,
        };
        cells[i] = cell_of(g);
    }
    let picked_up = frames[1].message.starts_with("g - a key");
    if picked_up {
        key = Some(agent0);
    }
    let layout = Arc::new(GridLayout::from_parts(gw, gh, cells, concealed, agent0, key).unwrap());
    let before = GridState {
        layout: Arc::clone(&layout),
        agent_pos: agent0,
        key_on_floor: key,
        key_held: false,
        door_locked: true,
        last_message: frames[0].message.clone(),
        step_count: 0,
        terminated: false,
    };
    let after = GridState {
        agent_pos: agent1,
        key_on_floor: if picked_up { None } else { key },
        key_held: picked_up || door_opened,
        door_locked: !door_opened,
        last_message: frames[1].message.clone(),
        step_count: 1,
        ..before.clone()
    };
    let before = GridState { key_held: door_opened, key_on_floor: if door_opened { None } else { key }, ..before };
    let (action, event) = match (agent1.x as isize - agent0.x as isize, agent1.y as isize - agent0.y as isize) {
        (0, -1) => (Action::GoNorth, SubgoalEvent::None),
        (1, 0) => (Action::GoEast, SubgoalEvent::None),
        (0, 1) => (Action::GoSouth, SubgoalEvent::None),
        (-1, 0) => (Action::GoWest, SubgoalEvent::None),
        _ if picked_up => (Action::PickUp, SubgoalEvent::KeyPickedUp),
        _ if door_opened => (Action::Apply, SubgoalEvent::DoorUnlocked),
        _ => (Action::Apply, SubgoalEvent::None),
    };
    let origin = (view == ViewKind::GameScreen).then(|| Coord::new(0, 0));
    (Transition::new(before, action, after, 0, event), origin)
}

pub fn check(fixture_name: &str, config: &str) -> Transition {
    let expected = fixture(fixture_name);
    let spec = find_config(config).unwrap().spec;
    let fr = frames(&expected, spec.view, spec.separator);
    let (t, origin) = rebuild(&fr, spec.view);
    let prompt = match origin {
        Some(o) => compose_with(&Renderer::with_origin(o), &spec, &t).unwrap(),
        None => compose(&spec, &t).unwrap(),
    };
    assert_same(&prompt.text, &expected);
    t
}

/// The game-screen prompt with provided subgoals: the game-screen observation
/// text around the provided-subgoal block of the cropped prompt.
pub fn check_gamescreen_provided() {
    let screen = fixture("gamescreen-discovered.txt");
    let cropped = fixture("cropped-provided.txt");
    let block_start = cropped.find("Consider the following subgoals:").unwrap();
    let block_end = cropped.find("Then, consider the following game transition").unwrap();
    let discover_start = screen.find("First, based on your knowledge").unwrap();
    let discover_end = screen.find("Then, consider the following game transition").unwrap();
    let expected =
        format!("{}{}{}", &screen[..discover_start], &cropped[block_start..block_end], &screen[discover_end..]);
    let spec = find_config("gamescreen-provided").unwrap().spec;
    let fr = frames(&screen, ViewKind::GameScreen, true);
    let (t, origin) = rebuild(&fr, ViewKind::GameScreen);
    let prompt = compose_with(&Renderer::with_origin(origin.unwrap()), &spec, &t).unwrap();
    assert_same(&prompt.text, &expected);
}
