use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("outcome {value} out of range for party {party} with {bound} outcomes")]
    OutcomeOutOfRange {
        party: usize,
        value: usize,
        bound: usize,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid wiring: {0}")]
    Wiring(String),

    #[error("invalid quantum object: {0}")]
    Quantum(String),

    #[error("invalid merge map: {0}")]
    Merge(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
