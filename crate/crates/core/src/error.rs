use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid process: {0}")]
    InvalidProcess(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sequence space |S|^|B| = {size} exceeds the memory budget of {budget} entries")]
    BudgetExceeded { size: u128, budget: u64 },

    #[error("outcome index {index} out of range for {num_outcomes} outcomes")]
    OutcomeOutOfRange { index: usize, num_outcomes: usize },

    #[error("overflow while sweeping the sequence space: {0}")]
    Overflow(String),

    #[error("newton solve for input {input} did not converge after {iterations} iterations (worst residual {residual:e})")]
    NewtonNotConverged { input: usize, iterations: usize, residual: f64 },

    #[error("newton system for input {input} is not positive definite (damping {damping:e})")]
    IllConditioned { input: usize, damping: f64 },

    #[error("quadratic prior update did not reach KKT tolerance (residual {residual:e} after {iterations} iterations)")]
    KktNotMet { iterations: usize, residual: f64 },

    #[error("instance too large for the brute-force oracle: {0}")]
    OracleTooLarge(String),

    #[error("oracle could not certify any restart (best gap {gap:e} bits, tolerance {tolerance:e})")]
    OracleNotCertified { gap: f64, tolerance: f64 },

    #[error("oracle restarts disagree: spread {spread:e} bits exceeds {limit:e}")]
    OracleDisagreement { spread: f64, limit: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
