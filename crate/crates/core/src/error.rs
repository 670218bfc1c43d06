use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation pipeline and its plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An estimator could not produce a delay (constant channels, all bins undefined, ...).
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    /// More than half of the bootstrap iterations produced no estimate.
    #[error("undefined bootstrap verdict: {undefined} of {total} iterations undefined")]
    UndefinedVerdict { undefined: usize, total: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Failure inside a simulated trial, tagged with its index.
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
