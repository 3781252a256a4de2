//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGrad { param: String },

    #[error("non-finite action passed to env.step: {0:?}")]
    NonFiniteAction(Vec<f32>),

    #[error("backward requires a scalar loss node, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },

    #[error("rollout buffer too small: {have} usable steps, need at least {need}")]
    BufferTooSmall { have: usize, need: usize },

    #[error("enabled terrain set is empty")]
    EmptyTerrainSet,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric abort: {0}")]
    NumericAbort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
