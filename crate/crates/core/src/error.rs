use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or config parameter violates its invariant. `field` names the offender.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("non-finite iterate at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("{0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch { expected: expected.into(), actual: actual.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }

    /// True for errors caused by bad input files, paths or configuration rather than numerics.
    ///
    /// Shape mismatches count as usage errors: they arise when inputs do not fit together.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Config(_)
            | Error::InvalidParameter { .. }
            | Error::ShapeMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
