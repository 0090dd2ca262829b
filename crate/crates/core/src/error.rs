//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{0}: input must be nonempty")]
    EmptyInput(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("class {class} has too few samples: need {needed}, have {available}")]
    InsufficientClassSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("{path}: wrong IDX magic, expected {expected:#010x}, found {found:#010x}")]
    IdxWrongMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX payload, expected {expected} bytes, found {found}")]
    IdxTruncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("IDX image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid probability vector: {0}")]
    InvalidSimplex(String),

    #[error("operation requires a {expected} likelihood, got {actual}")]
    LikelihoodKind {
        expected: &'static str,
        actual: &'static str,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
