use thiserror::Error;

/// Errors raised by the learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory space of {size:.3e} assignments exceeds enumeration cap {cap:.3e}; use {hint}")]
    Capacity { size: f64, cap: f64, hint: &'static str },

    #[error("dual objective diverged at iteration {iteration}")]
    Divergence { iteration: usize, last_theta: Vec<f64> },

    #[error("singular intensity curve: {0}")]
    Singular(String),

    #[error("observation sequence {index} has zero probability under every trajectory")]
    DegenerateEvidence { index: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
