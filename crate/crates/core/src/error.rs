use thiserror::Error;

/// Errors produced by the debugging toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DutiError {
    #[error("label out of range at index {index}: {label} is not in 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ill-conditioned kernel system: {0}")]
    IllConditioned(String),

    #[error("{solver} did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T, E = DutiError> = std::result::Result<T, E>;
