use thiserror::Error;

use crate::sparse::FactorError;

pub type Result<T, E = LgocvError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LgocvError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid hyperparameter point: {0}")]
    InvalidHyper(String),
    #[error("non-finite prior precision entry in component `{component}`")]
    NonFinitePrecision { component: String },
    #[error("observation {index}: response {y} outside the support of the {family} likelihood")]
    OutOfSupport { index: usize, y: f64, family: &'static str },
    #[error("mode search did not converge after {iterations} iterations at θ = {theta:?} (max |Δη| = {change:e})")]
    ModeNotConverged { iterations: usize, change: f64, theta: Vec<f64> },
    #[error("factorization failed: {0}")]
    Factorization(#[from] FactorError),
    #[error("constraint matrix is rank deficient")]
    RankDeficientConstraints,
    #[error("hyperparameter optimization failed: {0}")]
    Optimizer(String),
    #[error("observation index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("predictor {index} has zero marginal variance")]
    ZeroVariance { index: usize },
    #[error("leave-out precision is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    LeaveOutNotPositiveDefinite { min_eigenvalue: f64 },
    #[error("degenerate quadrature: leave-out variance {variance:e}")]
    DegenerateQuadrature { variance: f64 },
    #[error("non-finite density: {0}")]
    NonFinite(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for LgocvError {
    fn from(e: std::io::Error) -> Self {
        LgocvError::Io(e.to_string())
    }
}
