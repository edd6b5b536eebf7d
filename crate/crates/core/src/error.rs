use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sampling infeasible: {0}")]
    SamplingInfeasible(String),

    #[error("clustering error: {0}")]
    Cluster(String),

    #[error("evaluation protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
