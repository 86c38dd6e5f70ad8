use thiserror::Error;

/// Errors shared across the simulation, learning, and harness layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid state/reference: {0}")]
    InvalidInput(String),

    #[error("diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("warm-up incomplete: need {needed} samples, have {have}")]
    WarmupIncomplete { needed: usize, have: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
