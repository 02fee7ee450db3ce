use thiserror::Error;

use crate::estimator::FitTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{function}: argument {value} is outside the function's domain")]
    Domain { function: &'static str, value: f64 },

    #[error("linear predictor {eta} is outside the range of the {family} link with lambda = {lambda}")]
    LinkRange {
        family: &'static str,
        eta: f64,
        lambda: f64,
    },

    #[error("invalid link parameter lambda = {lambda} for the {family} link")]
    InvalidLambda { family: &'static str, lambda: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design matrix {0} is rank deficient")]
    RankDeficient(&'static str),

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("optimizer failed to converge after {} iterations (best log-likelihood {})", .trace.iterations(), .trace.best_loglik())]
    NonConvergence { trace: Box<FitTrace> },

    #[error("restricted fit for {restriction} did not converge")]
    RestrictedFit { restriction: String },

    #[error("{failed} of {total} replications failed to converge")]
    StudyFailed { failed: usize, total: usize },
}
