use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} is empty")]
    EmptyInput(String),

    #[error("unknown node ids in label file: {}", .0.join(", "))]
    UnknownNodes(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("graph is disconnected; extract the largest weakly connected component first")]
    Disconnected,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: String, row: usize },

    #[error("{method} diverged (learning rate {lr}): objective became non-finite")]
    Diverged { method: String, lr: f64 },

    #[error("eigensolver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("Katz series diverges: beta {beta} >= 1/spectral radius (radius >= {radius:.6})")]
    KatzDiverges { beta: f64, radius: f64 },

    #[error("similarity matrix is identically zero")]
    ZeroSimilarity,

    #[error("undefined distance correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("row count mismatch: header declares {expected} rows, found {found}")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("method {method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("all fits failed for {method}: {}", .causes.join("; "))]
    AllFitsFailed { method: String, causes: Vec<String> },

    #[error("round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("test split accessed more than once in round {round}")]
    TestLeak { round: usize },

    #[error("{0} (failed earlier in this run)")]
    CachedFailure(String),

    #[error("missing cache entries: {}", .0.join(", "))]
    MissingCache(Vec<String>),

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

    pub fn in_method(self, method: &str) -> Self {
        Error::Method {
            method: method.to_string(),
            source: Box::new(self),
        }
    }
}
