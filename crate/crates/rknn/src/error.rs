use thiserror::Error;

/// Crate-wide error type. The CLI maps variants to exit codes: input and
/// schema problems exit 1, runtime and solver problems exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("run spec error: {0}")]
    Spec(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("projection did not converge: residual {residual:e}")]
    ProjectionFailed { residual: f64 },

    #[error("sampling failed: {0}")]
    SamplingFailed(String),

    #[error("missing derivative: {0}")]
    MissingDerivative(&'static str),

    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("density must be positive on quadrature nodes (min {min:e})")]
    DensityNotPositive { min: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for usage/schema problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDomain(_)
            | Error::InvalidInput(_)
            | Error::Spec(_)
            | Error::UnknownName(_)
            | Error::Json(_) => 1,
            _ => 2,
        }
    }
}
