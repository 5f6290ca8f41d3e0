use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("unknown channel label `{0}`")]
    UnknownChannel(String),

    #[error("duplicate channel label `{0}`")]
    DuplicateChannel(String),

    #[error("trial {trial}: expected {expected} values, found {found}")]
    LengthMismatch {
        trial: String,
        expected: usize,
        found: usize,
    },

    #[error("trial {0}: non-finite sample value")]
    NonFinite(String),

    #[error("insufficient epoch span: {0}")]
    InsufficientEpochSpan(String),

    #[error("invalid filter specification: {0}")]
    InvalidFilter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate class labels: {0}")]
    DegenerateClasses(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("model container: {0}")]
    ModelFormat(String),

    #[error("non-monotone window timestamp: {got} after {previous}")]
    NonMonotoneTime { previous: f64, got: f64 },

    #[error("ensemble size mismatch: score built from {expected} members, decided with n = {got}")]
    MemberCountMismatch { expected: usize, got: usize },

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
