use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("capacity exceeded: {requested} streams requested but only {available} spatial degrees of freedom")]
    CapacityExceeded { requested: usize, available: usize },

    #[error("non-finite value at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },

    #[error("solver did not converge after {iterations} iterations (duality gap {gap:e}, tolerance {tolerance:e})")]
    Solver {
        iterations: usize,
        gap: f64,
        tolerance: f64,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("realization {realization}: {source}")]
    Realization {
        realization: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for errors caused by the request itself (bad config, impossible
    /// user counts) rather than by numerical breakdown during a run.
    pub fn is_configuration(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::CapacityExceeded { .. } => true,
            Error::Realization { source, .. } => source.is_configuration(),
            _ => false,
        }
    }
}
