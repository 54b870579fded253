use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A special function was evaluated outside its domain.
    #[error("{function}: argument {value} is outside the domain x > 0")]
    Domain { function: &'static str, value: f64 },

    /// An input violated a precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A configuration cannot be used (e.g. a class missing from a split).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or volume shapes disagree.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A NaN or infinity appeared in an activation or gradient.
    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: &'static str },
}

impl Error {
    /// True for numeric faults as opposed to validation failures.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;
