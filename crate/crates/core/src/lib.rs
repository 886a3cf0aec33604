//! Key-door gridworld, text observations, prompt composition, verdict
//! collection and scoring, and subgoal reward shaping.

pub mod annotators;
pub mod cli;
pub mod datasets;
pub mod keyroom;
pub mod metrics;
pub mod promptkit;
pub mod shaper;
pub mod textview;
