use thiserror::Error;

/// Errors raised by the model, inference and learning routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("observation {observation} is impossible under the model after action {action} (step {step})")]
    ZeroLikelihood {
        step: usize,
        action: usize,
        observation: usize,
    },

    #[error("non-finite value in {block}: {detail}")]
    NonFiniteValue { block: &'static str, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("index {index} out of range for {what} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("belief coordinates are only defined for 2 or 3 states (got {0})")]
    UnsupportedDimension(usize),

    #[error("unknown environment {0:?}")]
    UnknownEnvironment(String),

    #[error("{path}: {detail}")]
    Io { path: String, detail: String },

    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },

    #[error("trajectory {trajectory}: {source}")]
    InTrajectory {
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_trajectory(self, trajectory: usize) -> Self {
        Error::InTrajectory {
            trajectory,
            source: Box::new(self),
        }
    }

    /// Strips trajectory context, returning the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::InTrajectory { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
