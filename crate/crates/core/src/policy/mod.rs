//! Discrete action spaces and the feed-forward actor-critic network.
//!
//! The network maps the fixed-length observation built by
//! [`EpisodeState::observe`](crate::env::EpisodeState::observe) to a
//! probability vector over the discrete actions and a scalar state value.
//! Models serialize to a self-describing JSON file.

mod actions;
mod model;

use thiserror::Error;

pub use actions::{ActionEntry, ActionSpace};
pub use model::{
    entropy, greedy_action, sample_action, softmax, ForwardPass, InitRecord, PolicyModel, DEFAULT_HIDDEN,
    MODEL_KIND, MODEL_SCHEMA_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("action index {index} out of range for {len} actions")]
    ActionIndex { index: usize, len: usize },
    #[error("observation has length {got}, model expects {expected}")]
    ObservationLength { expected: usize, got: usize },
    #[error("model produced non-finite output (corrupted parameters?)")]
    NonFinite,
    #[error("probability vector is degenerate")]
    DegenerateDistribution,
    #[error("model incompatible with world: {0}")]
    Incompatible(String),
    #[error("model file version mismatch: {0}")]
    Version(String),
    #[error("model file shape mismatch: {0}")]
    Shape(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model file i/o: {0}")]
    Io(String),
}
