use thiserror::Error;

#[derive(Debug, Error)]
pub enum TcglError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TcglError>;
