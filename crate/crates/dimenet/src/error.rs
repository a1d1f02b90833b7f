use thiserror::Error;

use crate::params::ModelParams;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize, last_good: Box<ModelParams<f32>> },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] elastolab_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
