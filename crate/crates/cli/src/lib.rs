//! Command-line pipeline: phantom generation, forward simulation, dataset
//! building, training, inversion, evaluation and figures.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod plot;

pub use commands::Method;
pub use config::RunConfig;
pub use error::{CliError, Result};
