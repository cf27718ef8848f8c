use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row} of {what} is not a probability distribution (sum {sum})")]
    NotStochastic {
        what: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("markov chain is not irreducible: state {0} is not mutually reachable from state 0")]
    NotIrreducible(usize),

    #[error("markov chain is periodic with period {0}")]
    Periodic(usize),

    #[error("feature matrix is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("feature covariance is not positive definite (smallest eigenvalue {0:e})")]
    DegenerateCovariance(f64),

    #[error("linear solve failed: residual {residual:e} exceeds {tolerance:e}")]
    Singular { residual: f64, tolerance: f64 },

    #[error("{0} did not converge")]
    NotConverged(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size {alpha} exceeds the admissible maximum {max}")]
    StepSizeTooLarge { alpha: f64, max: f64 },

    #[error("iterate diverged at step {step} (norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("mixing horizon too short: only {0} points below 0.5")]
    HorizonTooShort(usize),

    #[error("resampling budget of {0} attempts exhausted")]
    ResamplingExhausted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
