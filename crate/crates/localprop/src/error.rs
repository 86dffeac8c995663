use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A feature store file is malformed. `offset` is the byte position at
    /// which the problem was detected.
    #[error("malformed feature store at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The iterative solver failed to reach its residual tolerance.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDidNotConverge { residual: f64, iterations: usize },

    /// A matrix expected to be symmetric positive definite was not.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
