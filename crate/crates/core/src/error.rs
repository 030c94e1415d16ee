use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unregistered problem `{0}`")]
    UnregisteredProblem(String),

    #[error("problem `{0}` has no analytic Pareto front")]
    UnsupportedProblem(String),

    #[error("decision variable {index} = {value} outside bounds [{lower}, {upper}]")]
    BoundsViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported objective dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
