use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum CraneError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("batch norm needs at least two rows in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model file: {0}")]
    Format(String),

    #[error("budget exceeded by {method}: {used} bytes > {budget} bytes")]
    Budget { method: String, used: usize, budget: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CraneError>;
