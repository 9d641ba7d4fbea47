//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("unsupported corruption kind: {0}")]
    UnsupportedCorruption(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("empty memory buffer")]
    EmptyMemory,

    #[error("training failure at optimizer step {step}: {message}")]
    TrainingFailure { step: u64, message: String },

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("config schema error at `{path}`: {message}")]
    SchemaError { path: String, message: String },

    #[error("artifact not found: {0}")]
    ArtifactNotFound(String),

    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),

    #[error("run directory is locked by another process: {0}")]
    Locked(String),

    #[error("corrupt or unreadable artifact `{path}`: {message}")]
    BadArtifact { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Exit code for the CLI: schema errors are distinguishable from runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SchemaError { .. } | Error::InvalidArgument(_) | Error::InvalidSplit(_) => 2,
            _ => 1,
        }
    }
}
