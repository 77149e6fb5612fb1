//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for `{op}`: {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("backward root is detached (requires_grad = false)")]
    DetachedRoot,

    #[error("backward already ran on this tape; call zero_grads first")]
    DoubleBackward,

    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("point dimension {point_dim} does not match primitive dimension {prim_dim}")]
    DimensionMismatch { point_dim: usize, prim_dim: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape raster has no interior cells")]
    EmptyShape,

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Diverged {
        epoch: usize,
        step: usize,
        what: String,
    },

    #[error("{path}: {reason}")]
    DataFormat { path: String, reason: String },

    #[error("{path}: dimension mismatch, got {got}, expected {expected}")]
    DimensionError {
        path: String,
        got: String,
        expected: String,
    },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: String, detail: String },

    #[error("{path}: bad magic (expected `{expected}`)")]
    BadMagic { path: String, expected: String },

    #[error("tree document error at `{path}`: {reason}")]
    TreeFormat { path: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
