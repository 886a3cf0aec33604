//! Single-turn prompt composition.
//!
//! A prompt has seven parts, in order: optional role, environment
//! description, symbol legend, task description, subgoal section,
//! instructions, and output-format request, followed by the transition
//! wrapped in `<gameplay>` markers and the closing notices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keyroom::{Transition, PICKUP_SUBGOAL, UNLOCK_SUBGOAL};
use crate::textview::{Renderer, ViewKind};

pub const ENV_DESCRIPTION: &str = "The environment is MiniHack.";
pub const TASK_DESCRIPTION: &str = "The task of the agent is to win the game.";
pub const LEGEND_INTRO: &str =
    "I will present you with a short extract of a gameplay. At each timestep, symbols represent the following items:";
pub const DISCOVER_INSTRUCTION: &str =
    "First, based on your knowledge of NetHack, break down the task of the agent into subgoals. ";
pub const PROVIDED_INTRO: &str = "Consider the following subgoals:";
pub const INSTRUCTIONS: &str = "Then, consider the following game transition, which might or might not contain these subgoals.\nDetermine if any of the subgoals is achieved at Time: 1 or not.";
pub const OUTPUT_FORMAT_REQUEST: &str = "Report your response in a dictionary containing the name of the subgoals as keys and booleans as value. For example:\n```python\n{\n    <name of goal>: <bool>,\n} ";
pub const CLOSING_NOTICE: &str = "I will not consider anything that is not in the dictionary.\nYou have only one shot at this, and you cannot ask for clarifications.";

/// Canonical subgoal names, in order.
pub const CANONICAL_SUBGOALS: [&str; 2] = [PICKUP_SUBGOAL, UNLOCK_SUBGOAL];

/// Legend entries for every glyph the renderer emits besides `@` and space.
pub fn default_symset() -> Vec<(char, String)> {
    [
        ('.', "represents a floor tile."),
        ('|', "can represent either a wall, a vertical wall, an open door."),
        (
            '-',
            "can represent either the bottom left corner (of a room), bottom right corner (of a room), wall, horizontal wall, wall, top left corner (of a room), op right corner (of a room).",
        ),
        ('+', "represents a closed door. Doors can be locked, and require a key to open."),
        ('(', "represents a useful item (pick-axe, key, lamp...)"),
        ('<', "represents a ladder or staircase up."),
        ('>', "represents a ladder or staircase down."),
    ]
    .into_iter()
    .map(|(g, d)| (g, d.to_owned()))
    .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("provided-subgoal mode needs at least one subgoal")]
    NoSubgoals,
    #[error("symbol legend does not cover glyph {0:?}")]
    LegendGap(char),
    #[error("unknown prompt configuration {0:?}")]
    UnknownConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "subgoals", rename_all = "snake_case")]
pub enum SubgoalMode {
    Provided(Vec<String>),
    Discover,
}

impl SubgoalMode {
    pub fn canonical() -> Self {
        SubgoalMode::Provided(CANONICAL_SUBGOALS.iter().map(|s| s.to_string()).collect())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SubgoalMode::Provided(_) => "provided",
            SubgoalMode::Discover => "discovered",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub role_text: Option<String>,
    pub env_description: String,
    pub symset: Vec<(char, String)>,
    pub task_description: String,
    pub subgoal_mode: SubgoalMode,
    pub view: ViewKind,
    pub separator: bool,
    pub include_action: bool,
    pub output_format_request: String,
}

impl PromptSpec {
    pub fn new(view: ViewKind, subgoal_mode: SubgoalMode) -> Self {
        Self {
            role_text: None,
            env_description: ENV_DESCRIPTION.to_owned(),
            symset: default_symset(),
            task_description: TASK_DESCRIPTION.to_owned(),
            subgoal_mode,
            view,
            separator: true,
            include_action: false,
            output_format_request: OUTPUT_FORMAT_REQUEST.to_owned(),
        }
    }

    /// Configuration name, e.g. `gamescreen-provided-nosep-action`.
    pub fn config_name(&self) -> String {
        let mut name = format!("{}-{}", self.view.name(), self.subgoal_mode.name());
        if !self.separator {
            name.push_str("-nosep");
        }
        if self.include_action {
            name.push_str("-action");
        }
        name
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if let SubgoalMode::Provided(goals) = &self.subgoal_mode {
            if goals.is_empty() {
                return Err(PromptError::NoSubgoals);
            }
        }
        for glyph in ['.', '|', '-', '+', '(', '<', '>'] {
            if !self.symset.iter().any(|(g, _)| *g == glyph) {
                return Err(PromptError::LegendGap(glyph));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub spec: PromptSpec,
    pub transition_id: String,
}

impl PromptText {
    /// Content hash of the prompt text; joins verdicts and cache entries.
    pub fn prompt_id(&self) -> String {
        prompt_hash(&self.text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn subgoal_section(mode: &SubgoalMode) -> String {
    match mode {
        SubgoalMode::Discover => format!("{DISCOVER_INSTRUCTION}\n"),
        SubgoalMode::Provided(goals) => {
            let mut s = format!("{PROVIDED_INTRO}\n```python\nsubgoals = {{\n");
            for g in goals {
                let _ = writeln!(s, "    \"{g}\": None,");
            }
            s.push_str("} \n``` \n");
            s
        }
    }
}

/// Composes the prompt for `t` with the default renderer.
pub fn compose(spec: &PromptSpec, t: &Transition) -> Result<PromptText, PromptError> {
    compose_with(&Renderer::default(), spec, t)
}

pub fn compose_with(renderer: &Renderer, spec: &PromptSpec, t: &Transition) -> Result<PromptText, PromptError> {
    spec.validate()?;
    let mut text = String::new();
    if let Some(role) = &spec.role_text {
        let _ = write!(text, "{role}\n\n");
    }
    let _ = write!(text, "{}\n\n", spec.env_description);
    let _ = writeln!(text, "{LEGEND_INTRO}");
    for (glyph, desc) in &spec.symset {
        let _ = writeln!(text, "- \"{glyph}\" {desc}");
    }
    text.push('\n');
    let _ = write!(text, "{}\n\n", spec.task_description);
    text.push_str(&subgoal_section(&spec.subgoal_mode));
    let _ = write!(text, "{INSTRUCTIONS}\n\n\n");
    let _ = write!(text, "{}\n\n", spec.output_format_request);
    text.push_str("Observation Sequence:\n\n<gameplay>\n");
    text.push_str(&renderer.render_transition(t, spec.view, spec.separator, spec.include_action));
    text.push_str("\n\n</gameplay>\n\n");
    let _ = writeln!(text, "{CLOSING_NOTICE}");
    Ok(PromptText { text, spec: spec.clone(), transition_id: t.id.clone() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedConfig {
    pub name: String,
    pub spec: PromptSpec,
    /// One of the four headline configurations (separator on, no action).
    pub main: bool,
}

/// All 16 configurations: view x subgoal mode x separator x action.
pub fn config_matrix() -> Vec<NamedConfig> {
    let mut out = Vec::with_capacity(16);
    for view in [ViewKind::GameScreen, ViewKind::Cropped] {
        for mode in [SubgoalMode::canonical(), SubgoalMode::Discover] {
            for separator in [true, false] {
                for include_action in [false, true] {
                    let spec = PromptSpec { separator, include_action, ..PromptSpec::new(view, mode.clone()) };
                    out.push(NamedConfig { name: spec.config_name(), main: separator && !include_action, spec });
                }
            }
        }
    }
    out
}

pub fn find_config(name: &str) -> Result<NamedConfig, PromptError> {
    config_matrix().into_iter().find(|c| c.name == name).ok_or_else(|| PromptError::UnknownConfig(name.to_owned()))
}
