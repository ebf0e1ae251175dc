use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Parse(String),

    /// A structurally valid document that violates the dataset contract.
    #[error("schema error in {location}: {message}")]
    Schema { location: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("image {0} has a zero mean region vector")]
    DegenerateImage(String),

    #[error("query set is empty")]
    EmptyQuerySet,

    #[error("unknown target image {0}")]
    UnknownTarget(String),

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value in {0}")]
    NonFiniteParameters(&'static str),

    #[error("activation cache does not match the parameters")]
    CacheMismatch,

    #[error("no unasked objects remain")]
    AllExcluded,

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("episode has no steps")]
    EmptyEpisode,

    #[error("insufficient data: {have} rounds collected, {need} required")]
    InsufficientData { have: usize, need: usize },

    #[error("non-finite loss at update step {step}")]
    NonFiniteLoss { step: usize },
}

impl Error {
    pub(crate) fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { location: location.into(), message: message.into() }
    }
}
