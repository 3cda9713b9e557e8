//! Command-line front end: dataset generation, training, evaluation,
//! retrieval and sweeps, with models persisted as canonical JSON.

pub mod args;
pub mod commands;
pub mod error;
pub mod model;

pub use error::{CliError, Result};
pub use model::ModelFile;
