use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum QlcError {
    /// A canonical parameter left the natural domain of the family.
    #[error("value {value} is outside the natural domain {domain}")]
    Domain { value: f64, domain: String },

    /// Malformed or inconsistent input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64, last: Vec<f64> },

    /// No sub-gaussian scale in the search bracket satisfies the condition.
    #[error("no admissible sub-gaussian scale; condition fails at lambda = {lambda}")]
    NoSubgaussianScale { lambda: f64 },

    /// An integral or expectation does not settle to a finite value.
    #[error("divergent quantity: {0}")]
    Divergent(String),

    /// A bound's hypothesis is violated on the evaluation grid.
    #[error("condition violated: {0}")]
    ConditionViolated(String),

    /// Too many Monte Carlo replications failed.
    #[error("{failed} of {total} replications failed")]
    FailureRate { failed: usize, total: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl QlcError {
    /// Whether the error comes from user input rather than from numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, QlcError::InvalidInput(_) | QlcError::Io(_) | QlcError::Csv(_) | QlcError::Json(_))
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            QlcError::Domain { .. } => "domain",
            QlcError::InvalidInput(_) => "invalid_input",
            QlcError::NonConvergence { .. } => "non_convergence",
            QlcError::NoSubgaussianScale { .. } => "no_subgaussian_scale",
            QlcError::Divergent(_) => "divergent",
            QlcError::ConditionViolated(_) => "condition_violated",
            QlcError::FailureRate { .. } => "failure_rate",
            QlcError::Io(_) => "io",
            QlcError::Csv(_) => "csv",
            QlcError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, QlcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(QlcError::InvalidInput(msg.into()))
}
