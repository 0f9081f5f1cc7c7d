//! Crate-wide error type.
//!
//! Everything fallible in the library funnels into [`Error`]. The CLI is
//! expected to print these on a single line, so variant messages stay short
//! and carry the identifying detail (index, name, path) inline.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A container's dimensions disagree with each other or with a config.
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A rotation's norm strayed too far from 1 to repair silently.
    #[error("rotation {index} has norm {norm:.6}, outside the repairable band")]
    RotationNorm { index: usize, norm: f64 },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A parameter fell outside its documented domain.
    #[error("invalid parameter: {context}")]
    InvalidParameter { context: String },

    /// Splitting would push the Gaussian count past the configured cap.
    #[error("split would grow the set to {requested} Gaussians, over the cap of {cap}")]
    SplitBudget { requested: usize, cap: usize },

    /// A query point left the lattice's bounding box.
    #[error("point ({x:.4}, {y:.4}, {z:.4}) is outside the lattice bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    /// ICP could not determine a rotation (degenerate correspondence geometry).
    #[error("alignment is degenerate: cross-covariance rank {rank} < 3")]
    DegenerateAlignment { rank: usize },

    /// An optimizer step saw a NaN gradient; names the parameter group.
    #[error("NaN gradient in parameter group '{group}' at step {step}")]
    NanGradient { group: String, step: usize },

    /// A mesh file failed to parse; names the offending line.
    #[error("mesh parse error at line {line}: {message}")]
    MeshParse { line: usize, message: String },

    /// A binary container had the wrong magic or an unsupported version.
    #[error("bad container: {message}")]
    BadContainer { message: String },

    /// Config file could not be understood.
    #[error("config error: {message}")]
    Config { message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an io error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidParameter {
            context: context.into(),
        }
    }
}
