// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input rejected by an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every position of a softmax was blocked.
    #[error("degenerate mask: every position is blocked")]
    DegenerateMask,

    /// Layer, head, token or position index outside the model's dimensions.
    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// Model configuration violates its invariants.
    #[error("invalid model config: {0}")]
    Config(String),

    /// A scene could not be generated for the requested spec.
    #[error("scene generation failed: {0}")]
    Generation(String),

    /// No bimodal split exists and no manual threshold was supplied.
    #[error("key classification unavailable: {0}")]
    ClassificationUnavailable(String),

    /// Run configuration rejected before any experiment started.
    #[error("invalid run config: {0}")]
    RunConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateMask => "degenerate_mask",
            Error::OutOfRange(_) => "out_of_range",
            Error::Config(_) => "model_config",
            Error::Generation(_) => "generation",
            Error::ClassificationUnavailable(_) => "classification_unavailable",
            Error::RunConfig(_) => "run_config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
