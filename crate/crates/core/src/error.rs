use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("unknown reference: {0}")]
    Reference(String),

    #[error("panel incomplete: site {site} has no data in week {week}")]
    Completeness { site: String, week: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("covariance block for cluster {cluster} is not positive definite (smallest pivot {pivot:e})")]
    Conditioning { cluster: usize, pivot: f64 },

    #[error("invalid prediction request: {0}")]
    Request(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerical linear algebra rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Rank(_) | Error::Conditioning { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
