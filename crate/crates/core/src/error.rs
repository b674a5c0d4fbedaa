//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by model construction, solvers, and evaluation.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Input data failed validation (non-finite entries, bad layout, ...).
    #[error("data validation failed: {reason}")]
    DataValidation { reason: String },

    /// Two operands have incompatible dimensions.
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    /// A camera block is not row-orthonormal within tolerance.
    #[error("rotation block for frame {frame} is not row-orthonormal: {reason}")]
    RotationInvalid { frame: usize, reason: String },

    /// A camera block is rank deficient (second singular value below 1e-6).
    #[error("degenerate rotation at frame {frame}: second singular value {sigma:.3e} < 1e-6")]
    DegenerateRotation { frame: usize, sigma: f64 },

    /// Temporal smoothness order other than 1 was requested.
    #[error("unsupported temporal smoothness order {order}: only first-order differences are implemented")]
    UnsupportedOrder { order: usize },

    /// A linear system that should be positive definite was not.
    #[error("rank-deficient system: {reason}; use lambda > 0 or provide non-degenerate rotations")]
    RankDeficient { reason: String },

    /// Track matrix has effective rank < 3, so rigid factorization cannot proceed.
    #[error("degenerate motion: track matrix has effective rank {rank} < 3")]
    DegenerateMotion { rank: usize },

    /// The metric upgrade failed (corrective Gram matrix not positive definite).
    #[error("rotation estimation failed: {reason}; consider providing rotations explicitly")]
    EstimationFailure { reason: String },

    /// A ground-truth frame has zero norm, so the normalized error is undefined.
    #[error("undefined normalization: ground-truth frame {frame} has zero norm after centering")]
    UndefinedNormalization { frame: usize },

    /// A scalar parameter is out of its documented range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, CoreError>;
