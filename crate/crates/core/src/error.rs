use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum ApceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("position {position} exceeds max_position {max}")]
    PositionOverflow { position: usize, max: usize },

    #[error("chunk {0} is not resident in the KV cache")]
    NotResident(usize),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ApceError> = std::result::Result<T, E>;

impl ApceError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
