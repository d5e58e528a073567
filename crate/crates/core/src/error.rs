use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension n = {0} is below 2")]
    DimensionTooSmall(usize),
    #[error("cells per axis m = {0} is below 2")]
    TooFewCells(usize),
    #[error("grid of n = {n}, m = {m} needs {required} entries, exceeding the budget of {budget}")]
    MemoryBudget {
        n: usize,
        m: usize,
        required: u128,
        budget: u128,
    },
    #[error("invalid marginal parameter: {0}")]
    InvalidMarginal(String),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("axis {axis} out of range for dimension {n}")]
    AxisOutOfRange { axis: usize, n: usize },
    #[error("marginal masses are incompatible: axis {axis} has mass {mass}, axis 1 has {reference}")]
    MassMismatch {
        axis: usize,
        mass: f64,
        reference: f64,
    },
    #[error("exponent p = {0} must exceed 1")]
    InvalidExponent(f64),
    #[error("derivative of the minimizer map is singular at s = 0 for p = {p} > 2 with zero smoothing")]
    SingularDerivative { p: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("candidate joint does not reproduce the marginals: axis {axis} deviates by {deviation:e}")]
    CandidateMarginals { axis: usize, deviation: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid payoff: {0}")]
    InvalidPayoff(String),
}

pub type Result<T> = std::result::Result<T, Error>;
