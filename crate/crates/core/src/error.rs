use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("buffer length {actual} does not match {width}x{height} grid")]
    BufferLength { width: usize, height: usize, actual: usize },

    #[error("non-finite value at pixel {index}")]
    NonFinite { index: usize },

    #[error("scale must be positive and finite, got {value} at pixel {index}")]
    InvalidScale { index: usize, value: f64 },

    #[error("mask has no valid pixels")]
    EmptyMask,

    #[error("hypothesis set is empty")]
    EmptyHypotheses,

    #[error("hypotheses must either all carry uncertainties or none")]
    MixedUncertainty,

    #[error("operation requires per-hypothesis uncertainties")]
    MissingUncertainty,

    #[error("operation needs at least {required} members, got {actual}")]
    TooFewMembers { required: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
