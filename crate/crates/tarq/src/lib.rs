//! Tail-aware post-training weight quantization.
//!
//! This crate quantizes dense weight matrices to low-bit group-scaled
//! lattices using calibration activations that carry a lexical rarity tag
//! (common vs tail). The pieces:
//!
//! - [`matrix`] / [`linalg`]: dense row-major matrices, damped inversion,
//!   Cholesky factors, and metric-weighted Frobenius products.
//! - [`lattice`]: the uniform min-max quantization lattice (scales,
//!   round-to-nearest projection, bit-exact 4-bit packing).
//! - [`stats`]: group-partitioned second moments, the trace-equalized
//!   rebalanced metric, and loss decompositions.
//! - [`gptq`]: the metric-weighted column sweep with error propagation.
//! - [`pipeline`]: the full per-layer solver (rebalanced metric, pilot
//!   projection, drift direction, closed-form step size, final projection)
//!   and the sequential multi-layer sweep.
//! - [`spqr`]: outlier-column selection and the activation gate that keeps
//!   rarity weighting and outlier protection from double-counting.
//! - [`lexicon`]: Zipf frequency scoring, rare/common tagging, and
//!   rare-biased calibration pool construction.
//! - [`harness`]: seeded synthetic experiment driver and report emission.

pub mod error;
pub mod gptq;
pub mod harness;
pub mod lattice;
pub mod lexicon;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod spqr;
pub mod stats;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::TarqError;
pub use matrix::Matrix;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TarqError>;
