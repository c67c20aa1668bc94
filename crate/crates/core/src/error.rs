use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested design cannot support an unbiased estimator: the restricted
    /// Gram matrix is singular or its condition number exceeds the threshold.
    #[error("infeasible design{}: {reason}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    InfeasibleDesign { iteration: Option<usize>, reason: String },

    #[error("solver failure after {iterations} iterations: {reason}")]
    SolverFailure {
        iterations: usize,
        reason: String,
        objective_log: Vec<f64>,
    },

    #[error("pattern generation failed: {0}")]
    GenerationFailure(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn infeasible(reason: impl Into<String>) -> Self {
        Error::InfeasibleDesign {
            iteration: None,
            reason: reason.into(),
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InfeasibleDesign { .. })
    }
}
