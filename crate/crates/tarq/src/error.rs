//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors surfaced by quantization, statistics, and harness operations.
#[derive(Debug, Error)]
pub enum TarqError {
    /// A damped metric could not be factored (pivot below the hard floor).
    #[error("metric is numerically singular: pivot {pivot:e} at index {index}")]
    SingularMetric { pivot: f64, index: usize },

    /// Operand shapes are incompatible.
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A calibration batch with zero positions was consumed.
    #[error("calibration batch is empty")]
    EmptyBatch,

    /// Packing requested for an unsupported bit width.
    #[error("packing supports 4-bit codes only, got {bits} bits")]
    BitsUnsupported { bits: u32 },

    /// A packed byte payload does not match the stated shape.
    #[error("packed length mismatch: expected {expected} bytes, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// Consecutive layers in a chain have incompatible shapes.
    #[error("layer chain mismatch at layer {layer}: expected input dim {expected}, got {got}")]
    ShapeChainMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    /// An utterance with no words was scored.
    #[error("utterance has no words")]
    EmptyUtterance,

    /// A calibration pool was requested from too little source material.
    #[error("insufficient corpus: need {needed} utterances, have {available}")]
    InsufficientCorpus { needed: usize, available: usize },

    /// A synthetic experiment description is invalid.
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),

    /// A report with no records was emitted.
    #[error("report has no records")]
    EmptyReport,

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
