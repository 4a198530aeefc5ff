use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A covariance sub-block could not be factorized even after jitter escalation.
    #[error("covariance submatrix of dimension {dim} is not positive definite")]
    SingularSubmatrix { dim: usize },
    /// Simulated dynamics produced a NaN or infinite state.
    #[error("non-finite state reached at period {period}")]
    NonFiniteState { period: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("input count {n} exceeds the limit of {max}")]
    SizeLimit { n: usize, max: usize },
    #[error("pair has {count} samples, at least {required} are needed")]
    InsufficientSamples { count: u64, required: u64 },
    /// An exact value function came out below its tolerance; the covariance is likely misconfigured.
    #[error("value function {value} is negative beyond tolerance {tolerance}")]
    NegativeValue { value: f64, tolerance: f64 },
    #[error("estimate and truth tables cover different pair sets ({left} vs {right} inputs)")]
    PairSetMismatch { left: usize, right: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}
