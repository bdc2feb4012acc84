use thiserror::Error;

use crate::linalg::PcgReport;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum PingError {
    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("covariance embedding is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    Covariance {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("numerical failure after {iterations} iterations: {message}")]
    Numerical { iterations: usize, message: String },

    #[error("imputation solve did not converge: {report:?}")]
    Imputation { report: PcgReport },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("chain failed at iteration {iteration}: {message}")]
    ChainFailed {
        iteration: usize,
        message: String,
        checkpoint: Option<std::path::PathBuf>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PingError>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PingError::Parameter(msg.into()))
}
