use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid segment [{start}, {end}]: {reason}")]
    InvalidSegment { start: f64, end: f64, reason: &'static str },

    #[error("invalid video duration {0}: must be finite and > 0")]
    InvalidDuration(f64),

    #[error("interval [{start}, {end}] lies outside the video [0, {duration}]")]
    EmptyAfterClamp { start: f64, end: f64, duration: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask list is empty")]
    EmptyMaskList,

    #[error("prediction for unknown question id `{0}`")]
    UnknownQuestionId(String),

    #[error("duplicate prediction for question id `{0}`")]
    DuplicatePrediction(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: line {line}: {message}")]
    Validation { path: PathBuf, line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("expected {expected} negative questions, got {got}")]
    NegativeCountMismatch { expected: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} ({detail})")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error("question pool too small: need {needed} negatives, {available} available")]
    InsufficientPool { needed: usize, available: usize },

    #[error("episode `{0}` carries no planted moment")]
    NotSynthetic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
