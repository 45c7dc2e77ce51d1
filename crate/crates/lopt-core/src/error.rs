//! Error type shared across the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, models, solvers and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands have incompatible shapes.
    #[error("{op}: dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An internal contract was broken (caller misuse of the API).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A model was used before its weights were set.
    #[error("uninitialized model: {0}")]
    Uninitialized(String),

    /// A loss became non-finite or exploded during an optimization run.
    #[error("divergence at step {step} ({context}): loss = {loss}")]
    Divergence {
        step: usize,
        loss: f64,
        context: String,
    },

    /// Input data has too little structure for the requested analysis.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// An oracle evaluation produced non-finite samples.
    #[error("oracle error: {0}")]
    Oracle(String),

    /// A configuration file or preset is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A structured text file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Filesystem failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
