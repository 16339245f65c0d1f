use thiserror::Error;

/// Errors surfaced by the tracking and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input contained NaN/inf or violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An innovation (or track) covariance failed its Cholesky factorization.
    #[error("singular innovation covariance{}", match .track {
        Some(id) => format!(" for track {id}"),
        None => String::new(),
    })]
    SingularInnovation { track: Option<u64> },

    /// A sensor frame arrived at or before the list timestamp.
    #[error("stale frame: t={frame_t} does not advance list time t={list_t}")]
    StaleFrame { frame_t: f64, list_t: f64 },

    /// MSE requested but no sample could be paired with the ground truth.
    #[error("undefined MSE: no overlapping samples between series")]
    UndefinedMse,

    /// Not enough samples for a statistical estimate.
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
