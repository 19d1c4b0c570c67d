use std::path::PathBuf;

/// Errors produced by the simulator, the optimizers and the experiment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("environment episode is finished; reset before stepping")]
    EpisodeDone,

    #[error("flight log too short: {len} rows for mini-trajectory length {window}")]
    LogTooShort { len: usize, window: usize },

    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    KernelNotPositiveDefinite(f64),

    #[error("non-finite loss during PPO update: {0}")]
    NonFiniteLoss(String),

    #[error("data collection aborted: {0}")]
    CollectionAborted(String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed input {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
