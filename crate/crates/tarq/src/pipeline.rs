//! Per-layer tail-aware quantization and the sequential layer sweep.
//!
//! One layer runs as: accumulate group moments, build the rebalanced
//! metric, take a pilot column-sweep projection, derive the drift
//! direction from the input-error cross-moment, fit the scalar step size
//! by one-dimensional least squares against the pilot displacement, shift
//! the target, and project the shifted target back into the lattice under
//! the same metric. The output stays in the lattice; no floating-point
//! residual is stored.
//!
//! The sequential sweep keeps two activation streams per calibration
//! position (one through the original weights, one through the already
//! quantized ones) so each layer sees exactly the drift the deployed
//! model would produce upstream.

use crate::error::TarqError;
use crate::gptq::{gptq_sweep, SweepConfig};
use crate::lattice::{dequantize, QuantizedTensor};
use crate::linalg::{damped_inverse, weighted_inner, weighted_loss, Damping, SymMatrix};
use crate::matrix::Matrix;
use crate::stats::{
    accumulate_moments, group_losses, rarebal_metric, GroupedMoments, RarebalMetric, Tag,
    TaggedActivations,
};
use crate::Result;

/// Relative part of the step-size denominator guard.
const ALPHA_EPS_REL: f64 = 1e-12;
/// Absolute floor making a zero direction yield a zero step.
const ALPHA_EPS_ABS: f64 = 1e-30;

/// Knobs shared by every layer of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    /// Multiplier on the trace-equalized tail coefficient.
    pub cost_ratio_c: f64,
    /// Relative epsilon for the tail-trace denominator.
    pub eps_rel: f64,
    /// Relative damping for the residual-direction inverse, independent
    /// from the sweep's own damping.
    pub delta: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            cost_ratio_c: 1.0,
            eps_rel: 1e-8,
            delta: 0.01,
        }
    }
}

/// The continuous residual-correction step attached to a layer result.
#[derive(Debug, Clone)]
pub struct ResidualStep {
    /// Drift-compensation direction; zero when no residual step ran.
    pub direction: Matrix,
    /// Fitted scalar step size.
    pub alpha: f64,
    /// Dequantized pilot minus original weights.
    pub pilot_displacement: Matrix,
    /// Continuous target handed to the final projection.
    pub target: Matrix,
    /// Relative damping used for the direction inverse.
    pub delta: f64,
    /// Absolute denominator guard used for the step fit.
    pub eps: f64,
}

/// Quadratic losses of a finished layer against its own calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLosses {
    pub common: f64,
    pub tail: f64,
    /// Loss under the metric the layer was solved with.
    pub weighted: f64,
}

/// Columns kept at full precision alongside the packed tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FpColumns {
    /// Sorted column indices.
    pub indices: Vec<usize>,
    /// `rows x indices.len()` original values, column k holding the
    /// weight column `indices[k]`.
    pub values: Matrix,
}

/// Everything produced for one quantized layer.
#[derive(Debug, Clone)]
pub struct LayerResult {
    pub quantized: QuantizedTensor,
    pub metric: RarebalMetric,
    pub residual: ResidualStep,
    pub losses: LayerLosses,
    /// Full-precision sidecar columns, when outlier protection ran.
    pub fp_columns: Option<FpColumns>,
}

impl LayerResult {
    /// Dequantized weights with any protected columns restored exactly.
    pub fn effective_weights(&self) -> Matrix {
        let mut w = dequantize(&self.quantized);
        if let Some(fp) = &self.fp_columns {
            for (k, &j) in fp.indices.iter().enumerate() {
                for i in 0..w.rows() {
                    w[(i, j)] = fp.values[(i, k)];
                }
            }
        }
        w
    }
}

/// Drift-compensation direction `W · H_delta · (H_rb + δI)⁻¹`.
pub fn compute_direction(
    w: &Matrix,
    moments: &GroupedMoments,
    metric: &RarebalMetric,
    delta: f64,
) -> Result<Matrix> {
    if w.cols() != moments.dim() {
        return Err(TarqError::DimMismatch {
            expected: (w.rows(), moments.dim()),
            got: (w.rows(), w.cols()),
        });
    }
    let g = damped_inverse(&metric.h_rb, Damping::Relative(delta))?;
    w.matmul(&moments.h_delta)?.matmul(g.as_matrix())
}

/// One-dimensional least-squares step size: the minimizer of
/// `|E - alpha D|^2_H` up to the `eps` denominator guard. A zero
/// direction returns zero.
pub fn fit_alpha(e: &Matrix, d: &Matrix, h: &SymMatrix, eps: f64) -> Result<f64> {
    let num = weighted_inner(e, d, h)?;
    let den = weighted_inner(d, d, h)? + eps;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Pilot projection plus optional residual correction under a fixed
/// metric. Shared by all ablation variants; also the entry point for
/// custom position-weighted metrics.
pub fn solve_under_metric(
    w: &Matrix,
    moments: &GroupedMoments,
    metric: RarebalMetric,
    cfg: &SweepConfig,
    params: &PipelineParams,
    with_residual: bool,
) -> Result<LayerResult> {
    let pilot = gptq_sweep(w, &metric.h_rb, cfg)?;
    let pilot_displacement = dequantize(&pilot).sub(w)?;

    let (quantized, residual) = if with_residual {
        let direction = compute_direction(w, moments, &metric, params.delta)?;
        let dd = weighted_inner(&direction, &direction, &metric.h_rb)?;
        let eps = ALPHA_EPS_REL * dd + ALPHA_EPS_ABS;
        let alpha = fit_alpha(&pilot_displacement, &direction, &metric.h_rb, eps)?;
        let target = w.add_scaled(alpha, &direction)?;
        let final_q = gptq_sweep(&target, &metric.h_rb, cfg)?;
        (
            final_q,
            ResidualStep {
                direction,
                alpha,
                pilot_displacement,
                target,
                delta: params.delta,
                eps,
            },
        )
    } else {
        (
            pilot,
            ResidualStep {
                direction: Matrix::zeros(w.rows(), w.cols()),
                alpha: 0.0,
                pilot_displacement,
                target: w.clone(),
                delta: params.delta,
                eps: ALPHA_EPS_ABS,
            },
        )
    };

    let delta_w = w.sub(&dequantize(&quantized))?;
    let (common, tail) = group_losses(&delta_w, moments)?;
    let weighted = weighted_loss(&delta_w, &metric.h_rb)?;
    Ok(LayerResult {
        quantized,
        metric,
        residual,
        losses: LayerLosses {
            common,
            tail,
            weighted,
        },
        fp_columns: None,
    })
}

/// Full per-layer pass: rebalanced metric, pilot, residual correction,
/// final in-lattice projection.
pub fn tarq_layer(
    w: &Matrix,
    batch: &TaggedActivations,
    cfg: &SweepConfig,
    params: &PipelineParams,
) -> Result<LayerResult> {
    ablation_variant(w, batch, cfg, Variant::Tarq, params)
}

/// Which pieces of the per-layer pass to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Plain summed metric, no residual correction.
    Gptq,
    /// Rebalanced metric only.
    RarebalOnly,
    /// Residual correction over the plain metric.
    ResidualOnly,
    /// Rebalanced metric plus residual correction.
    Tarq,
}

/// Run one layer under the chosen component subset.
pub fn ablation_variant(
    w: &Matrix,
    batch: &TaggedActivations,
    cfg: &SweepConfig,
    variant: Variant,
    params: &PipelineParams,
) -> Result<LayerResult> {
    if w.cols() != batch.dim() {
        return Err(TarqError::DimMismatch {
            expected: (w.rows(), batch.dim()),
            got: (w.rows(), w.cols()),
        });
    }
    let moments = accumulate_moments(batch)?;
    let rebalanced = |m: &GroupedMoments| {
        let eps = params.eps_rel * m.h_common.trace();
        rarebal_metric(m, params.cost_ratio_c, eps)
    };
    // The plain metric is carried in the same container with a unit
    // coefficient so every variant reports a lambda.
    let plain = |m: &GroupedMoments| RarebalMetric {
        h_rb: m.plain_metric(),
        lambda: 1.0,
        cost_ratio_c: 1.0,
        eps: 0.0,
    };
    match variant {
        Variant::Gptq => solve_under_metric(w, &moments, plain(&moments), cfg, params, false),
        Variant::RarebalOnly => {
            solve_under_metric(w, &moments, rebalanced(&moments), cfg, params, false)
        }
        Variant::ResidualOnly => {
            solve_under_metric(w, &moments, plain(&moments), cfg, params, true)
        }
        Variant::Tarq => solve_under_metric(w, &moments, rebalanced(&moments), cfg, params, true),
    }
}

/// Elementwise nonlinearity separating chained layers in the synthetic
/// model.
pub fn interlayer_nonlinearity(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Sequential sweep with a caller-supplied per-layer solver. The solver
/// sees the layer index, the original weights, and the paired-stream
/// batch for that layer; its result's effective weights drive the
/// quantized stream forward.
pub fn sequential_sweep_with<F>(
    layers: &[Matrix],
    inputs: &[Vec<f64>],
    tags: &[Tag],
    mut solve: F,
) -> Result<Vec<LayerResult>>
where
    F: FnMut(usize, &Matrix, &TaggedActivations) -> Result<LayerResult>,
{
    if layers.is_empty() || inputs.is_empty() {
        return Err(TarqError::EmptyBatch);
    }
    if tags.len() != inputs.len() {
        return Err(TarqError::DimMismatch {
            expected: (inputs.len(), 1),
            got: (tags.len(), 1),
        });
    }
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != layers[0].cols() {
            return Err(TarqError::ShapeChainMismatch {
                layer: 0,
                expected: layers[0].cols(),
                got: inputs[t].len(),
            });
        }
    }
    for l in 1..layers.len() {
        if layers[l].cols() != layers[l - 1].rows() {
            return Err(TarqError::ShapeChainMismatch {
                layer: l,
                expected: layers[l - 1].rows(),
                got: layers[l].cols(),
            });
        }
    }

    let mut fp_stream: Vec<Vec<f64>> = inputs.to_vec();
    let mut q_stream: Vec<Vec<f64>> = inputs.to_vec();
    let mut results = Vec::with_capacity(layers.len());

    for (l, w) in layers.iter().enumerate() {
        let batch = TaggedActivations::from_streams(&fp_stream, &q_stream, tags)?;
        let result = solve(l, w, &batch)?;
        if l + 1 < layers.len() {
            let w_eff = result.effective_weights();
            for (fp, q) in fp_stream.iter_mut().zip(q_stream.iter_mut()) {
                let mut next_fp = w.matvec(fp)?;
                interlayer_nonlinearity(&mut next_fp);
                *fp = next_fp;
                let mut next_q = w_eff.matvec(q)?;
                interlayer_nonlinearity(&mut next_q);
                *q = next_q;
            }
        }
        results.push(result);
    }
    Ok(results)
}

/// Sequential sweep using one ablation variant for every layer.
pub fn sequential_sweep(
    layers: &[Matrix],
    inputs: &[Vec<f64>],
    tags: &[Tag],
    cfg: &SweepConfig,
    variant: Variant,
    params: &PipelineParams,
) -> Result<Vec<LayerResult>> {
    sequential_sweep_with(layers, inputs, tags, |_, w, batch| {
        ablation_variant(w, batch, cfg, variant, params)
    })
}
