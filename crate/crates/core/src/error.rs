use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("rejection budget of {budget} tries exhausted while placing {what}")]
    RejectionBudgetExhausted { what: &'static str, budget: usize },

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("replay buffer holds {size} transitions, cannot sample {requested}")]
    InsufficientSamples { size: usize, requested: usize },

    #[error("conflicting terminal indicators: {0}")]
    ConflictingIndicators(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("checkpoint truncated while reading {0}")]
    CheckpointTruncated(&'static str),

    #[error("bad checkpoint magic: {0}")]
    CheckpointMagic(String),

    #[error("config file not found: {0}")]
    ConfigMissing(PathBuf),

    #[error("malformed config: {0}")]
    ConfigSyntax(String),

    #[error("unknown config key `{0}`")]
    ConfigUnknownKey(String),

    #[error("config value out of range for `{key}`: {reason}")]
    ConfigOutOfRange { key: String, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
