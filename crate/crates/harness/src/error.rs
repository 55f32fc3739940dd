use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration or arguments, detected before any work is done.
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] robust_irl::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error("no result rows to {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
