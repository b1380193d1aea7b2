use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate plan")]
    DegeneratePlan,
    #[error("degenerate goal")]
    DegenerateGoal,
    #[error("no path")]
    NoPath,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no non-compliant data")]
    NoNonCompliantData,
    #[error("dataset contains a single class")]
    SingleClass,
    #[error("no training performed")]
    NoTrainingPerformed,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty record set")]
    EmptyRecords,
    #[error("behavior level mismatch")]
    LevelMismatch,
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("expert failure: {0}")]
    ExpertFailure(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("content hash mismatch for {0}")]
    HashMismatch(PathBuf),
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
