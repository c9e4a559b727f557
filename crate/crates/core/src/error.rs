use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degree {n_max} exceeds the supported maximum of {max}")]
    DegreeCap { n_max: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("unknown class label `{0}`")]
    UnknownClass(String),

    #[error("combinatorial guard exceeded: {count} supports > {limit}")]
    GuardExceeded { count: u128, limit: u128 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::DegreeCap { .. } | Error::GuardExceeded { .. } => {
                ErrorKind::Config
            }
            Error::NonFinite(_) => ErrorKind::Numerical,
            Error::DimensionMismatch { .. }
            | Error::Degenerate(_)
            | Error::UnknownClass(_)
            | Error::Format(_)
            | Error::Io { .. }
            | Error::Json { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
