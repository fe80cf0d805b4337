use thiserror::Error;

/// Errors raised by model validation, numerical routines and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("generator must be a non-empty square matrix, got {rows} rows with row {bad_row} of length {bad_len}")]
    NonSquare {
        rows: usize,
        bad_row: usize,
        bad_len: usize,
    },
    #[error("generator entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("generator entry ({row}, {col}) = {value} is a negative off-diagonal rate")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("generator row {row} sums to {sum:e}, expected 0")]
    RowSumNonzero { row: usize, sum: f64 },
    #[error("generator is reducible: state {to} cannot be reached from state {from}")]
    Reducible { from: usize, to: usize },
    #[error("linear system is numerically singular ({0})")]
    SingularSystem(&'static str),
    #[error("stationary mean rate is zero; the constant-rate limit is undefined")]
    ZeroMeanRate,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e}) after {intervals} subintervals")]
    QuadratureFailure {
        tolerance: f64,
        estimate: f64,
        intervals: usize,
    },
    #[error("queue mean E Q0(t) is zero (t = 0 or zero arrival rate)")]
    DegenerateMean,
    #[error("exact enumeration too large: {0}")]
    TooLarge(String),
    #[error("length mismatch: {left} arrivals but {right} service times")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
