use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("position {0} is used more than once")]
    DuplicatePosition(usize),
    #[error("position {position} is outside the index length {length}")]
    PositionOutOfRange { position: usize, length: usize },
    #[error("position {0} is not filled by any token")]
    MissingPosition(usize),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("invalid k: {0}")]
    InvalidK(String),
    #[error("cannot pick a representative of an empty cluster")]
    EmptyCluster,
    #[error("offset error: {0}")]
    OffsetError(String),
    #[error("dangling reference {0}")]
    DanglingRef(String),
    #[error("split error: {0}")]
    SplitError(String),
    #[error("episode infeasible: {0}")]
    EpisodeInfeasible(String),
    #[error("fold {0} is outside 1..=5")]
    InvalidFold(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid gold sequence: {0}")]
    InvalidGold(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("support group for relation {0} is empty")]
    IncompleteSupport(String),
    #[error("record {0} has disagreeing votes but no adjudication")]
    MissingAdjudication(String),
    #[error("graph store is closed")]
    StoreClosed,
    #[error("store at {0} is locked by another writer")]
    StoreLocked(PathBuf),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("failed to bind {address}: {source}")]
    BindError {
        address: String,
        #[source]
        source: std::io::Error,
    },
    #[error("pipeline aborted after {processed} abstracts: {reason}")]
    PipelineAborted {
        processed: usize,
        reason: String,
        checkpoint: Box<crate::pipeline::Checkpoint>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
