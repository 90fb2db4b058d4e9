//! Outlier-column protection and the rarity/outlier orthogonality gate.
//!
//! Two passes over the calibration activations. Pass 1 scores every
//! weight column by `|W[:,j]|^2 / [H0^-1]_jj` against the damped raw
//! second moment and keeps the top ceil(rho*d) columns at full precision.
//! Pass 2 builds the rarity-weighted second moment, except that positions
//! whose activations already spike on a protected column have their
//! rarity weight replaced by one; mass the outlier columns absorb must
//! not be counted again by the rebalanced metric.

use crate::error::TarqError;
use crate::gptq::{gptq_sweep_protected, SweepConfig};
use crate::lattice::dequantize;
use crate::linalg::{damped_inverse, weighted_loss, Damping, SymMatrix};
use crate::matrix::Matrix;
use crate::pipeline::{FpColumns, LayerLosses, LayerResult, PipelineParams, ResidualStep};
use crate::stats::{accumulate_moments, group_losses, rarebal_metric, Tag, TaggedActivations};
use crate::Result;

/// Outlier selection and gating knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// Fraction rho of columns kept at full precision; at least one
    /// column is always selected.
    pub outlier_fraction: f64,
    /// Gate threshold tau, in units of the global mean absolute
    /// activation.
    pub gate_threshold: f64,
    /// Relative damping for the selection moment.
    pub base_damp: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            outlier_fraction: 0.01,
            gate_threshold: 3.0,
            base_damp: 0.01,
        }
    }
}

/// Selected outlier columns with the salience of every column.
#[derive(Debug, Clone)]
pub struct OutlierSet {
    /// Sorted (ascending) protected column indices.
    pub columns: Vec<usize>,
    /// Salience per column, length d.
    pub saliences: Vec<f64>,
}

/// Second moment of the partially-quantized stream weighted per position.
pub fn weighted_moment(acts: &TaggedActivations, weights: &[f64]) -> SymMatrix {
    let n = acts.dim();
    let mut upper = Matrix::zeros(n, n);
    for (pos, &w) in acts.positions().iter().zip(weights) {
        for i in 0..n {
            let xi = w * pos.x_q[i];
            if xi == 0.0 {
                continue;
            }
            let row = upper.row_mut(i);
            for (slot, &xj) in row[i..].iter_mut().zip(&pos.x_q[i..]) {
                *slot += xi * xj;
            }
        }
    }
    SymMatrix::from_upper_fn(n, |i, j| upper[(i, j)])
}

/// Pass 1: pick the ceil(rho*d) columns with the largest salience
/// `|W[:,j]|^2 / [H0^-1]_jj`, ties broken toward lower index.
pub fn select_outliers(
    w: &Matrix,
    acts: &TaggedActivations,
    cfg: &GateConfig,
) -> Result<OutlierSet> {
    if acts.is_empty() {
        return Err(TarqError::EmptyBatch);
    }
    let d = w.cols();
    if acts.dim() != d {
        return Err(TarqError::DimMismatch {
            expected: (d, d),
            got: (acts.dim(), acts.dim()),
        });
    }
    let ones = vec![1.0; acts.len()];
    let h0 = weighted_moment(acts, &ones);
    let inv = damped_inverse(&h0, Damping::Relative(cfg.base_damp))?;

    let saliences: Vec<f64> = (0..d)
        .map(|j| {
            let col_sq: f64 = (0..w.rows()).map(|i| w[(i, j)] * w[(i, j)]).sum();
            col_sq / inv.entry(j, j)
        })
        .collect();

    let k = (cfg.outlier_fraction * d as f64).ceil().max(1.0) as usize;
    let k = k.min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| saliences[b].total_cmp(&saliences[a]).then(a.cmp(&b)));
    let mut columns: Vec<usize> = order[..k].to_vec();
    columns.sort_unstable();
    Ok(OutlierSet { columns, saliences })
}

/// Gate decision per position: does any protected column's activation
/// exceed tau times the global mean absolute activation?
fn gate_flags(acts: &TaggedActivations, m: &OutlierSet, tau: f64) -> Vec<bool> {
    let d = acts.dim() as f64;
    let n = acts.len() as f64;
    let total_abs: f64 = acts
        .positions()
        .iter()
        .map(|p| p.x_q.iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    let mean_abs = total_abs / (n * d);
    acts.positions()
        .iter()
        .map(|p| {
            m.columns
                .iter()
                .any(|&j| p.x_q[j].abs() > tau * mean_abs)
        })
        .collect()
}

/// Pass 2: replace the rarity weight by one on gated positions, then
/// accumulate the weighted second moment.
pub fn gate_weights(
    acts: &TaggedActivations,
    m: &OutlierSet,
    rarity_weights: &[f64],
    cfg: &GateConfig,
) -> Result<SymMatrix> {
    if rarity_weights.len() != acts.len() {
        return Err(TarqError::DimMismatch {
            expected: (acts.len(), 1),
            got: (rarity_weights.len(), 1),
        });
    }
    let flags = gate_flags(acts, m, cfg.gate_threshold);
    let gated: Vec<f64> = rarity_weights
        .iter()
        .zip(&flags)
        .map(|(&w, &g)| if g { 1.0 } else { w })
        .collect();
    Ok(weighted_moment(acts, &gated))
}

/// Outlier-protected layer solve. Rarity weights are the rebalanced
/// coefficient on tail positions and one on common positions (so the
/// weighted moment reproduces the rebalanced metric when nothing gates);
/// `rarity_weighted = false` drops the rebalancing entirely for the plain
/// outlier-protection baseline.
pub fn spqr_tarq_layer(
    w: &Matrix,
    batch: &TaggedActivations,
    cfg: &SweepConfig,
    params: &PipelineParams,
    gate: &GateConfig,
    rarity_weighted: bool,
    gate_enabled: bool,
) -> Result<LayerResult> {
    if w.cols() != batch.dim() {
        return Err(TarqError::DimMismatch {
            expected: (w.rows(), batch.dim()),
            got: (w.rows(), w.cols()),
        });
    }
    let moments = accumulate_moments(batch)?;
    let eps = params.eps_rel * moments.h_common.trace();
    let rb = rarebal_metric(&moments, params.cost_ratio_c, eps);

    let outliers = select_outliers(w, batch, gate)?;

    let weights: Vec<f64> = batch
        .positions()
        .iter()
        .map(|p| match (rarity_weighted, p.tag) {
            (true, Tag::Tail) => rb.lambda,
            _ => 1.0,
        })
        .collect();
    let h_solve = if gate_enabled {
        gate_weights(batch, &outliers, &weights, gate)?
    } else {
        weighted_moment(batch, &weights)
    };

    let quantized = gptq_sweep_protected(w, &h_solve, cfg, &outliers.columns)?;
    let fp_columns = FpColumns {
        values: Matrix::from_fn(w.rows(), outliers.columns.len(), |i, k| {
            w[(i, outliers.columns[k])]
        }),
        indices: outliers.columns.clone(),
    };

    let mut effective = dequantize(&quantized);
    for (k, &j) in fp_columns.indices.iter().enumerate() {
        for i in 0..w.rows() {
            effective[(i, j)] = fp_columns.values[(i, k)];
        }
    }
    let delta_w = w.sub(&effective)?;
    let (common, tail) = group_losses(&delta_w, &moments)?;
    let weighted = weighted_loss(&delta_w, &h_solve)?;

    Ok(LayerResult {
        quantized,
        metric: crate::stats::RarebalMetric {
            h_rb: h_solve,
            lambda: rb.lambda,
            cost_ratio_c: params.cost_ratio_c,
            eps,
        },
        residual: ResidualStep {
            direction: Matrix::zeros(w.rows(), w.cols()),
            alpha: 0.0,
            pilot_displacement: delta_w.scale(-1.0),
            target: w.clone(),
            delta: params.delta,
            eps: 0.0,
        },
        losses: LayerLosses {
            common,
            tail,
            weighted,
        },
        fp_columns: Some(fp_columns),
    })
}
