//! Crate-wide error type.

/// Errors raised by constructors, validators, and the simulation operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("need at least two channels, got {len}")]
    TooShort { len: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("state vector not normalized: sum of |amplitude|^2 = {norm_sq}")]
    NotNormalized { norm_sq: f64 },

    #[error("matrix not Hermitian at ({row},{col}): |rho_jk - conj(rho_kj)| = {delta}")]
    NotHermitian { row: usize, col: usize, delta: f64 },

    #[error("matrix trace = {trace}, expected 1")]
    TraceNotOne { trace: f64 },

    #[error("matrix not positive semidefinite: smallest eigenvalue = {min_eigenvalue}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("diagonal entry {index} has imaginary part {imaginary}")]
    NonRealDiagonal { index: usize, imaginary: f64 },

    #[error("probability {index} is negative: {value}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("simplex point sums to {sum}, expected 1")]
    SimplexSumNotOne { sum: f64 },

    #[error("coupling eta for channel {channel} out of (0,1): {value}")]
    EtaOutOfRange { channel: usize, value: f64 },

    #[error("summed couplings {sum} exceed the per-step budget {budget}")]
    EtaBudgetExceeded { sum: f64, budget: f64 },

    #[error("noise schedule defines {defined_steps} steps but step {step} was requested")]
    ScheduleExhausted { step: u64, defined_steps: u64 },

    #[error("sign at position {index} must be +1 or -1, got {value}")]
    InvalidSign { index: usize, value: i8 },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("update denominator {denominator} is degenerate (couplings violate the schedule bounds)")]
    DegenerateDenominator { denominator: f64 },

    #[error("problem size {size} exceeds the enumeration limit {limit}")]
    DimensionTooLarge { size: u64, limit: u64 },

    #[error("input {index} must be positive, got {value}")]
    NonPositiveInput { index: usize, value: f64 },

    #[error("grid misses {missing_mass} of the probability mass")]
    GridTooNarrow { missing_mass: f64 },

    #[error("diffusion step left the safety box at coordinate {coordinate}: {value} (shrink the step size)")]
    StepTooLarge { coordinate: usize, value: f64 },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
