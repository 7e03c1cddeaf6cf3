use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid boundary specification: {0}")]
    InvalidBoundary(String),

    #[error("invalid obstacle: {0}")]
    Obstacle(String),

    #[error("solver diverged at step {step}")]
    Diverged { step: usize },

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("transfer surgery rejected: {0}")]
    Transfer(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
