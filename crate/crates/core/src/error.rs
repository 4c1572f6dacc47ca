use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the basis domain: {reason}")]
    Domain { value: f64, reason: &'static str },

    #[error("value {value} at index {index} is outside the basis domain: {reason}")]
    DomainAt {
        index: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("basis is collinear on the pooled data (Gram condition number {condition:.3e})")]
    SingularBasis { condition: f64 },

    #[error(
        "Newton solver did not converge after {iterations} iterations \
         (gradient sup-norm {gradient_norm:.3e}, last step {last_step:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last_step: f64,
    },

    #[error("estimator requires a converged fit")]
    NotConverged,

    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("plug-in moment matrix is singular or not positive definite")]
    SingularMoment,

    #[error("density at the quantile must be positive, got {0}")]
    NonpositiveDensity(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("group `{0}` has no usable observations")]
    EmptyGroup(String),

    #[error("{failed} of {total} replicates failed (limit is 1%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
