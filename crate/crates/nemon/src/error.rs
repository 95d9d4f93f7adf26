//! Error type shared across the library.

use thiserror::Error;

/// Unified error enum for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum NemonError {
    /// Shapes of the operands do not line up (vector length, matrix dims, ...).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A weight matrix fails the well-posedness certificate mu_inf(A) <= gamma.
    #[error("network is not well posed: mu_inf(A) = {mu_inf} exceeds gamma = {gamma}")]
    NotWellPosed { mu_inf: f64, gamma: f64 },

    /// A fixed-point solve ran out of its iteration budget or diverged.
    #[error("{context}: solve did not converge after {iterations} iterations (last residual {residual:e})")]
    SolveFailed {
        context: String,
        iterations: usize,
        residual: f64,
    },

    /// A numerical consistency check failed (non-finite values, broken identity).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// IDX container: the leading magic word is not an expected value.
    #[error("idx: bad magic word {found:#010x} (expected 0x00000803 images or 0x00000801 labels)")]
    IdxBadMagic { found: u32 },

    /// IDX container: payload is shorter than the header dimensions imply.
    #[error("idx: truncated payload: header implies {needed} bytes, file holds {got}")]
    IdxTruncated { needed: usize, got: usize },

    /// IDX container: header dimensions overflow or are implausibly large.
    #[error("idx: dimension product overflows the supported size")]
    IdxDimOverflow,

    /// IDX container: payload is longer than the header dimensions imply.
    #[error("idx: {extra} trailing bytes after the declared payload")]
    IdxTrailingBytes { extra: usize },

    /// Text-format parse failure (config file, matrix file, CSV).
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, NemonError>;
