use thiserror::Error;

#[derive(Debug, Error)]
pub enum EfcError {
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("integration diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("optimization problem infeasible: {0}")]
    Infeasible(String),
    #[error("invalid grid: {}", .0.join("; "))]
    InvalidGrid(Vec<String>),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EfcError {
    /// True for failures caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            EfcError::InvalidGrid(_) | EfcError::Parse(_) | EfcError::Validation(_) | EfcError::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, EfcError>;
