use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: all {lines} non-empty lines are malformed")]
    AllLinesMalformed { path: PathBuf, lines: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary size {requested} cannot hold the {required} mandatory pieces")]
    VocabTooSmall { requested: usize, required: usize },

    #[error("language id {0:?} is already in the vocabulary")]
    DuplicateLanguage(String),

    #[error("unknown language {0:?}")]
    UnknownLanguage(String),

    #[error("language {0:?} has no instances")]
    EmptyLanguage(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sequence length {len} exceeds max_positions {limit}")]
    PositionOverflow { len: usize, limit: usize },

    #[error("token id {id} is out of range for vocabulary size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    /// Stable snake-case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::AllLinesMalformed { .. } => "all_lines_malformed",
            Error::Config(_) => "config",
            Error::VocabTooSmall { .. } => "vocab_too_small",
            Error::DuplicateLanguage(_) => "duplicate_language",
            Error::UnknownLanguage(_) => "unknown_language",
            Error::EmptyLanguage(_) => "empty_language",
            Error::EmptyInput(_) => "empty_input",
            Error::PositionOverflow { .. } => "position_overflow",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
            Error::Metric(_) => "metric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
