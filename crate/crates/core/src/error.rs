//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor or buffer had an unexpected shape or length.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid channel state (power, SNR, symbol counts).
    #[error("channel error: {0}")]
    Channel(String),

    /// Training aborted (non-finite loss, missing registry entry, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Evaluation request that cannot be served (off-grid point, ...).
    #[error("eval error: {0}")]
    Eval(String),

    /// Checkpoint directory missing, corrupt, or from a different config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset missing or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// External compressor (separation baseline) not present on this host.
    #[error("compressor unavailable: {0}")]
    CompressorUnavailable(String),

    /// Bug guard: broken internal invariant (duplicate parameter names, ...).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
