use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LdrError>;

#[derive(Debug, Error)]
pub enum LdrError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("series did not converge: {0}")]
    Convergence(String),

    #[error("ingestion error at line {line}, column {column}: {message}")]
    Ingestion {
        line: usize,
        column: String,
        message: String,
    },

    #[error("{rejected} row(s) rejected during ingestion; first: {first}")]
    Rejected { rejected: usize, first: Box<LdrError> },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("optimization diverged at epoch {epoch} (step size {step_size}): {message}")]
    Optimization {
        epoch: usize,
        step_size: f64,
        message: String,
    },

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<LdrError>,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LdrError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        LdrError::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LdrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed input data rather than numerics.
    pub fn is_ingestion(&self) -> bool {
        matches!(
            self,
            LdrError::Ingestion { .. } | LdrError::Rejected { .. } | LdrError::Csv(_)
        )
    }
}
