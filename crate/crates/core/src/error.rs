//! Error taxonomy shared by every module in the crate.
//!
//! Errors are structured so callers can map them onto process exit codes:
//! configuration problems, ingestion problems, and model-gate failures are
//! distinct variants rather than stringly-typed messages.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Tensor or matrix shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An adapter was asked for something it cannot provide
    /// (gradients, activations, unconditional branch, ...).
    #[error("capability not available: {0}")]
    Capability(String),

    /// Loading a dataset, checkpoint, or run artifact failed.
    #[error("ingestion failed: {0}")]
    Ingestion(String),

    /// A trained model missed its quality gate.
    #[error("model gate failed: {0}")]
    Gate(String),

    /// An attack failed mid-run; carries enough context to locate the step.
    #[error("attack failed at cycle {cycle}, step {step}: {source}")]
    Attack {
        cycle: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Filesystem or serialization trouble.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization trouble.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }

    pub fn ingestion(msg: impl Into<String>) -> Self {
        Error::Ingestion(msg.into())
    }

    pub fn gate(msg: impl Into<String>) -> Self {
        Error::Gate(msg.into())
    }

    /// Wraps an error with the attack loop position it occurred at.
    pub fn at_step(self, cycle: usize, step: usize) -> Self {
        Error::Attack {
            cycle,
            step,
            source: Box::new(self),
        }
    }
}
