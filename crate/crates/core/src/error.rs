use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
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

    #[error("duplicate piece id `{0}`")]
    DuplicateId(String),

    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(i64),

    #[error("invalid piece `{id}`: {reason}")]
    InvalidPiece { id: String, reason: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("split produced an empty {0} part")]
    EmptySplitPart(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty token sequence")]
    EmptySequence,

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite loss on sample `{id}`")]
    NonFiniteLoss { id: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metric needs both classes present ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("infeasible bias spec: {0}")]
    InfeasibleSpec(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
