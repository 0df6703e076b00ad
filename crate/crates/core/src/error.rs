use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("{0} is not a prime power")]
    NotPrimePower(u64),
    #[error("extension degree must be at least 1")]
    ZeroDegree,
    #[error("field order {0} exceeds the supported maximum 65536")]
    FieldTooLarge(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("field element {value} out of range for q = {q}")]
    ElementOutOfRange { value: u64, q: usize },
    #[error("matrix is singular over the field")]
    Singular,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("computation needs {needed} units, above the configured cap {cap}")]
    GuardExceeded { needed: u128, cap: u128 },
    #[error("iteration did not converge within {0} steps")]
    NoConvergence(usize),
    #[error("input distribution must be uniform for this operation")]
    NonUniformInput,
    #[error("kernel search exhausted its budget of {0} candidates")]
    BudgetExhausted(usize),
    #[error("posterior has zero total mass (inconsistent hard decisions)")]
    ZeroMass,
    #[error("malformed document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
