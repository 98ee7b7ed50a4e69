use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cyclic skeleton: joint {joint} is on a parent cycle")]
    CyclicSkeleton { joint: usize },

    #[error("skeleton must have exactly one root, found {found}")]
    RootCount { found: usize },

    #[error("zero-length bone {bone} ({parent} -> {child})")]
    ZeroLengthBone { bone: usize, parent: usize, child: usize },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0} is not a unit vector (norm {1})")]
    NotUnit(&'static str, f64),

    #[error("zero mean shoulder distance, cannot normalize")]
    ZeroShoulderDistance,

    #[error("{0}: zero-norm vector")]
    ZeroNorm(&'static str),

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite {term} loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, term: &'static str },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (non-finite values, failed checks)
    /// rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteLoss { .. })
    }
}
