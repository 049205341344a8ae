use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),

    /// A statistical model that cannot be realised (e.g. a correlation matrix
    /// that is not positive semidefinite).
    #[error("model error: {0}")]
    Model(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("surrogate construction failed: {0}")]
    Surrogate(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
