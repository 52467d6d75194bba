//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field `{0}` has no valid cells")]
    EmptyField(String),

    #[error("degenerate trend-surface fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("model state error: {0}")]
    State(String),

    #[error("both supervision masks are empty")]
    EmptySupervision,

    #[error("non-finite gradient in parameter `{name}` (index {index})")]
    NonFiniteGradient { name: String, index: usize },

    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Diverged { iteration: usize },

    #[error("linear solve failed: {0}; try a larger ridge regularization")]
    Solver(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
