use thiserror::Error;

/// Errors raised by the model, root machinery and simulators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported dimension {0}: the polar root machinery requires d = 2")]
    UnsupportedDimension(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("coincident positions for particles {0} and {1}")]
    Coincident(usize, usize),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("unresolved jump at t = {time}: {reason}")]
    UnresolvedJump { time: f64, reason: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
