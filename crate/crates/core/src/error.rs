use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid cost entry {value} at ({row}, {col})")]
    InvalidCost { row: usize, col: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("assignment does not fit its inputs: {0}")]
    AssignmentMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("gradient shape mismatch: expected {expected} per-prediction gradients, got {got}")]
    GradientShape { expected: usize, got: usize },

    #[error("transform records come from different scenes ({from} vs {to})")]
    RecordMismatch { from: u64, to: u64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{}:{line}:{column}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss = {loss}")]
    Divergence { epoch: usize, iteration: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NumericDomain(_))
    }
}
