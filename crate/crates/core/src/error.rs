use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A log-space exponent exceeded what binary64 can exponentiate.
    #[error("overflow: exponent {exponent:.6e} exceeds budget {budget}{}", at_radius.map(|t| format!(" (reached log-radius {t:.6e})")).unwrap_or_default())]
    Overflow {
        exponent: f64,
        budget: f64,
        at_radius: Option<f64>,
    },

    #[error("quadrature failed: estimate {estimate:.6e}, error {error:.3e} after {intervals} intervals")]
    QuadratureFailure {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("step size {step:.3e} fell below the minimum at log-radius {log_radius:.6e}")]
    StiffnessFailure { step: f64, log_radius: f64 },

    #[error("only {found} of {wanted} zeros reached before {reason}")]
    ZeroNotReached {
        found: usize,
        wanted: usize,
        reason: String,
    },

    #[error("no sign change in bracket [{lo:.6e}, {hi:.6e}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("no solution with k = {k} at lambda = {target:.6e}; scanned lambda range [{lambda_min:.6e}, {lambda_max:.6e}]")]
    NoSolutionInRange {
        k: usize,
        target: f64,
        lambda_min: f64,
        lambda_max: f64,
    },

    #[error("profile window reaches r = {reach:.6e} but the nodal domain ends at {limit:.6e}")]
    WindowTooLarge { reach: f64, limit: f64 },

    #[error("every member of the family failed")]
    FamilyEmpty,

    #[error("trajectory invariant violated: {0}")]
    InvalidTrajectory(String),
}
