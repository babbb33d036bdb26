use thiserror::Error;

use crate::logic::ParseError;

/// Errors raised by the numeric pipeline (grounding, networks, inference, training, datasets).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("value {value} outside [0,1]")]
    Domain { value: f64 },

    #[error("grounding capacity exceeded: {what} needs {needed} groundings, limit is {limit}")]
    Capacity {
        what: String,
        needed: u128,
        limit: u64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("rule {rule} is not in prenex form")]
    NotPrenex { rule: usize },

    #[error("unknown atom {0}")]
    UnknownAtom(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("split violation: {0}")]
    SplitViolation(String),

    #[error("image source unavailable: {0}")]
    SourceUnavailable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
