use thiserror::Error;

/// Invalid parameters or mismatched inputs supplied by the caller.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("bit at index {index} has value {value}, expected 0 or 1")]
    InvalidBit { index: usize, value: u8 },
    #[error("mapping is not a bijection on [0, {length})")]
    NotABijection { length: usize },
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("cannot flip {count} distinct bits in a frame of {length} bits")]
    TooManyErrors { count: usize, length: usize },
    #[error("frame must hold at least one bit")]
    EmptyFrame,
    #[error("invalid {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            name,
            reason: reason.into(),
        }
    }
}
