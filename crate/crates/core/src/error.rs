use thiserror::Error;

/// Errors produced by the metric-learning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("class {class} has {available} usable members but k = {k} requires more")]
    Feasibility {
        class: usize,
        k: usize,
        available: usize,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step} (learning rate {learning_rate}): {detail}")]
    Diverged {
        step: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Shape(format!("{what}: expected {expected}, got {got}"))
}
