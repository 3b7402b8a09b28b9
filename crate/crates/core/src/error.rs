use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsffsError {
    /// A parameter combination that can never produce a valid run.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// Forward cache does not belong to the network it is being used with.
    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DsffsError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DsffsError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DsffsError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DsffsError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsffsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied settings rather than by the
    /// data or the environment.
    pub fn is_config(&self) -> bool {
        matches!(self, DsffsError::Config(_))
    }
}

pub type Result<T, E = DsffsError> = std::result::Result<T, E>;
