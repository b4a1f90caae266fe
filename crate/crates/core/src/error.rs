use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("policy violation: {0}")]
    Policy(String),
    #[error("training diverged at epoch {epoch} (batch {batch}): last finite loss {last_loss}")]
    TrainingDiverged { epoch: usize, batch: usize, last_loss: f64 },
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
