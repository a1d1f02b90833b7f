use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),

    /// A value or argument violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("solver failed to converge: relative residual {residual:.3e} after {iterations} refinement steps")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("singular system: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures caused by numerics rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::Numerical(_)
        )
    }
}
