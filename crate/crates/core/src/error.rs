use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the family or operation.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    /// The requested law is outside the class the operation is defined for.
    #[error("class error: {0}")]
    Class(String),

    /// Quadrature, root finding or a difference quotient did not converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A Monte Carlo experiment cannot meet its accuracy floor with the given budget.
    #[error("infeasible experiment: {message} (required reps ~ {required_reps:.3e})")]
    Infeasible { message: String, required_reps: f64 },

    /// A simulation exceeds the configured work budget.
    #[error("budget exceeded: {message} (estimated work {estimated:.3e} > limit {limit:.3e})")]
    Budget {
        message: String,
        estimated: f64,
        limit: f64,
    },

    #[error("unsupported case: {0}")]
    Unsupported(String),

    #[error("degenerate dependence: {0}")]
    DegenerateDependence(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
