use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite operand: {0}")]
    NonFinite(f64),

    #[error("value {value} is not representable with {mantissa_bits} mantissa bits")]
    NotRepresentable { value: f64, mantissa_bits: u32 },

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("unsupported precision: {0} mantissa bits (expected 1..=26 or 52)")]
    InvalidPrecision(u32),

    #[error("interval count must be a power of two >= 2, got {0}")]
    InvalidIntervalCount(usize),

    #[error("non-finite value produced at step {step}")]
    NonFiniteStep { step: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for errors raised by the arithmetic itself rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::NonFiniteStep { .. })
    }
}
