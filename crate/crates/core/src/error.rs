use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("point does not provide block `{0}`")]
    MissingBlock(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("parameter outside the admissible set: {0}")]
    OutsideTheta(String),
    #[error("invalid set description: {0}")]
    InvalidSet(String),
    #[error("SOS compilation failed: {0}")]
    Compile(String),
    #[error("conic solver: {0}")]
    Solver(String),
    #[error("no optimal solution available (status {0})")]
    NotOptimal(String),
    #[error("infeasible program at constraint `{0}`")]
    Infeasible(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("planner infeasible at stage {stage}: {reason}")]
    PlannerInfeasible { stage: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
