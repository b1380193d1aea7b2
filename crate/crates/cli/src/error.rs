use std::fmt;

use socnav_core::Error as CoreError;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Missing, malformed or inconsistent data on disk (exit 2).
    Data(String),
    /// The run itself failed: collision, no path, demonstrator failure (exit 3).
    Run(String),
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Run(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidArgument(_) | CoreError::NoTrainingPerformed | CoreError::EmptyTrainingSet => {
                Failure::Usage(msg)
            }
            CoreError::NoPath
            | CoreError::DegenerateGoal
            | CoreError::ExpertFailure(_)
            | CoreError::InfeasibleScenario(_) => Failure::Run(msg),
            _ => Failure::Data(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}
