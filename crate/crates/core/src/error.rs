use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A determinant left the open set det > 0 (or fell below the float floor).
    #[error("determinant {det:e} is not positive")]
    NonPositiveDeterminant { det: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state has infinite energy")]
    InfiniteEnergyState,

    #[error("inner solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    InnerSolverDiverged { iterations: usize, grad_norm: f64 },

    #[error("step {step} rejected: {reason}")]
    StepRejected { step: usize, reason: String },

    #[error("time {t} is outside the trajectory range")]
    TimeOutOfRange { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },

    #[error("malformed data at row {row}: {message}")]
    Malformed { row: usize, message: String },
}

impl Error {
    /// Solver failures map to their own CLI exit code.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::InnerSolverDiverged { .. } | Error::StepRejected { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
