use std::io;

use thiserror::Error;

use crate::train::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("parameter {0} has no gradient")]
    MissingGradient(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Non-finite loss or activations during training. `last_good` is the
    /// state at the start of the failing epoch.
    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize, last_good: Option<Box<Checkpoint>> },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Failures while decoding the binary dataset and checkpoint containers.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },

    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },

    #[error("label {label} of sample {index} out of range for {num_classes} classes")]
    LabelOutOfRange { index: usize, label: u8, num_classes: u8 },

    #[error("corrupt payload at offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}
