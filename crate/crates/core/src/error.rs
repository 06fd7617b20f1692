use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural problems in graph data (bad node ids, self-loops, ...).
    #[error("structural error: {0}")]
    Structure(String),

    /// Inputs that violate a documented precondition (mask overlap, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Shape disagreement between matrices, parameters or gradients.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed persisted data (bad manifest, truncated blob, hash mismatch).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
