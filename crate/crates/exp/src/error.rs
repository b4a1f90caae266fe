use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
    #[error(transparent)]
    Core(#[from] thzcomp_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExpError>;

impl ExpError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Schema(_) => 2,
            ExpError::Core(thzcomp_core::Error::Dependency(_)) => 3,
            ExpError::Core(thzcomp_core::Error::Policy(_)) => 4,
            _ => 1,
        }
    }
}
