//! Error type shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An operation produced a NaN or infinite value.
    NonFinite { op: &'static str },
    /// A gradient contained a non-finite value for the named parameter.
    NonFiniteGradient { name: String },
    /// A token index fell outside the embedding vocabulary.
    IndexOutOfRange { index: usize, vocab: usize },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// A named parameter was expected but not found.
    MissingParam { name: String },
    /// A split or batch was empty where at least one example is required.
    EmptySplit { what: &'static str },
    /// A configuration value failed validation.
    InvalidConfig(String),
    /// A training loop diverged (non-finite loss) at the given step.
    Diverged { step: usize },
    /// A durability check was missing the forget accuracy for a precision.
    MissingPrecision { precision: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::NonFiniteGradient { name } => {
                write!(f, "non-finite gradient for parameter {name}")
            }
            Error::IndexOutOfRange { index, vocab } => {
                write!(f, "token index {index} out of range for vocab {vocab}")
            }
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::MissingParam { name } => write!(f, "missing parameter {name}"),
            Error::EmptySplit { what } => write!(f, "empty {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Diverged { step } => write!(f, "training diverged at step {step}"),
            Error::MissingPrecision { precision } => {
                write!(f, "certificate input missing precision {precision}")
            }
        }
    }
}

impl core::error::Error for Error {}
