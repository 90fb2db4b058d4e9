//! Metric-weighted column-sweep quantization.
//!
//! Columns are quantized one at a time in natural order. After column `j`
//! is rounded, its normalized error `e_j = (w_j - q_j) / L[j][j]` is
//! pushed into the still-unquantized columns through row `j` of the
//! upper Cholesky factor `L` of `(H + δI)⁻¹`, so later columns absorb
//! earlier rounding error in the geometry of the metric.
//!
//! Group scales are frozen from the original weights before the sweep
//! starts: error propagation must not move the projection lattice. Rows
//! never interact: the sweep is row-wise independent given the shared
//! factor.

use crate::error::TarqError;
use crate::lattice::{dequantize, group_scales, quantize_value, QuantConfig, QuantizedTensor};
use crate::linalg::{cholesky_of_inverse, weighted_loss, Damping, SymMatrix};
use crate::matrix::Matrix;
use crate::Result;

/// Sweep parameters: lattice config plus relative damping for the
/// inverse-metric factor. Column reordering is not supported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub quant: QuantConfig,
    /// Relative damping: the diagonal shift is `percdamp * mean(diag(H))`.
    pub percdamp: f64,
    pub act_order: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            quant: QuantConfig::default(),
            percdamp: 0.01,
            act_order: false,
        }
    }
}

impl SweepConfig {
    pub fn new(quant: QuantConfig, percdamp: f64) -> Self {
        Self {
            quant,
            percdamp,
            act_order: false,
        }
    }
}

/// Quantize `w` under metric `h` by the error-propagating column sweep.
pub fn gptq_sweep(w: &Matrix, h: &SymMatrix, cfg: &SweepConfig) -> Result<QuantizedTensor> {
    gptq_sweep_protected(w, h, cfg, &[])
}

/// Column sweep with a set of protected columns that are left untouched:
/// never quantized, never drifted by propagation, emitting zero error.
/// Their codes are zero in the returned tensor; callers that protect
/// columns keep the exact values in a sidecar.
pub fn gptq_sweep_protected(
    w: &Matrix,
    h: &SymMatrix,
    cfg: &SweepConfig,
    protected: &[usize],
) -> Result<QuantizedTensor> {
    let (rows, cols) = (w.rows(), w.cols());
    if h.dim() != cols {
        return Err(TarqError::DimMismatch {
            expected: (cols, cols),
            got: (h.dim(), h.dim()),
        });
    }
    assert!(!cfg.act_order, "column reordering is not supported");

    let mut skip = vec![false; cols];
    for &j in protected {
        skip[j] = true;
    }

    let scales = group_scales(w, &cfg.quant);
    let factor = cholesky_of_inverse(h, Damping::Relative(cfg.percdamp))?;
    let g = cfg.quant.group_size;

    let mut work = w.clone();
    let mut codes = vec![0i8; rows * cols];
    for j in 0..cols {
        if skip[j] {
            continue;
        }
        let l_row = factor.as_matrix().row(j).to_vec();
        let ljj = l_row[j];
        for i in 0..rows {
            let s = scales[(i, j / g)];
            let wj = work[(i, j)];
            let c = quantize_value(wj, s, &cfg.quant);
            codes[i * cols + j] = c;
            let err = (wj - s * c as f64) / ljj;
            if err == 0.0 {
                continue;
            }
            let row = work.row_mut(i);
            for k in (j + 1)..cols {
                if !skip[k] {
                    row[k] -= err * l_row[k];
                }
            }
        }
    }

    Ok(QuantizedTensor::new(rows, cols, cfg.quant, codes, scales))
}

/// Metric-weighted loss of a sweep result against the original weights.
pub fn sweep_loss_report(w: &Matrix, q: &QuantizedTensor, h: &SymMatrix) -> Result<f64> {
    let delta = w.sub(&dequantize(q))?;
    weighted_loss(&delta, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::quantize_rtn;
    use crate::test_util::{random_matrix, random_spd};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(bits: u32, group: usize) -> SweepConfig {
        SweepConfig::new(QuantConfig::new(bits, group), 0.01)
    }

    #[test]
    fn identity_metric_matches_rtn() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w = random_matrix(4, 12, &mut rng);
            let c = cfg(4, 4);
            let q = gptq_sweep(&w, &SymMatrix::identity(12), &c).unwrap();
            let rtn = quantize_rtn(&w, &c.quant);
            assert_eq!(q.codes(), rtn.codes());
        }
    }

    #[test]
    fn scaled_identity_metric_matches_rtn() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for k in [1.0, 7.3] {
            let w = random_matrix(3, 8, &mut rng);
            let c = cfg(4, 8);
            let h = SymMatrix::identity(8).scale(k);
            let q = gptq_sweep(&w, &h, &c).unwrap();
            assert_eq!(q.codes(), quantize_rtn(&w, &c.quant).codes());
        }
    }

    #[test]
    fn lattice_exact_input_is_fixpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = 0.25;
        let vals: Vec<f64> = (-8..8).map(|c| s * c as f64).collect();
        let w = Matrix::from_rows(&[&vals, &vals]);
        for _ in 0..10 {
            let h = random_spd(16, &mut rng);
            let q = gptq_sweep(&w, &h, &cfg(4, 16)).unwrap();
            assert_eq!(dequantize(&q), w);
        }
    }

    #[test]
    fn metric_scale_invariance_exact_for_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let w = random_matrix(5, 10, &mut rng);
        let h = random_spd(10, &mut rng);
        let c = cfg(4, 5);
        let base = gptq_sweep(&w, &h, &c).unwrap();
        for k in [4.0, 0.25] {
            let scaled = gptq_sweep(&w, &h.scale(k), &c).unwrap();
            assert_eq!(scaled.codes(), base.codes());
        }
    }

    #[test]
    fn sweep_improves_on_rtn_statistically() {
        // Greedy error compensation should beat plain rounding under
        // correlated metrics in nearly all instances.
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let c = cfg(4, 8);
        let trials = 200;
        let mut wins = 0;
        for _ in 0..trials {
            let w = random_matrix(8, 16, &mut rng);
            let h = random_spd(16, &mut rng);
            let swept = gptq_sweep(&w, &h, &c).unwrap();
            let rtn = quantize_rtn(&w, &c.quant);
            let loss_sweep = sweep_loss_report(&w, &swept, &h).unwrap();
            let loss_rtn = sweep_loss_report(&w, &rtn, &h).unwrap();
            if loss_sweep <= loss_rtn {
                wins += 1;
            }
        }
        assert!(
            wins as f64 >= 0.95 * trials as f64,
            "sweep beat rtn on only {wins}/{trials} instances"
        );
    }

    /// Literal single-purpose re-implementation of the sweep for 1x2
    /// weights: closed-form damped 2x2 inverse, closed-form upper
    /// Cholesky factor of that inverse, then the two-step sweep.
    fn reference_sweep_1x2(w: [f64; 2], h: [[f64; 2]; 2], cfg: &SweepConfig) -> [i8; 2] {
        let quant = &cfg.quant;
        // Damped metric.
        let shift = cfg.percdamp * (h[0][0] + h[1][1]) / 2.0;
        let (a, b, d) = (h[0][0] + shift, h[0][1], h[1][1] + shift);
        // Closed-form inverse.
        let det = a * d - b * b;
        let (ia, ib, id) = (d / det, -b / det, a / det);
        // Upper Cholesky factor of the inverse:
        // l00 = sqrt(ia); l01 = ib / l00; l11 = sqrt(id - l01^2).
        let l00 = ia.sqrt();
        let l01 = ib / l00;
        let l11 = (id - l01 * l01).sqrt();
        assert!((l01 * l01 + l11 * l11 - id).abs() <= 1e-12 * id.abs());
        // Frozen scales from the original weights (one group of two).
        let levels = ((1u32 << quant.bits) - 1) as f64;
        let span = w[0].max(w[1]) - w[0].min(w[1]);
        let s = (span / levels).max(quant.scale_floor);
        let clamp = |c: f64| {
            c.max(quant.code_min() as f64)
                .min(quant.code_max() as f64) as i8
        };
        // Sweep: quantize column 0, propagate, quantize column 1.
        let c0 = clamp((w[0] / s).round());
        let e0 = (w[0] - s * c0 as f64) / l00;
        let w1 = w[1] - e0 * l01;
        let c1 = clamp((w1 / s).round());
        [c0, c1]
    }

    #[test]
    fn matches_reference_on_correlated_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let c = cfg(2, 2);
        for _ in 0..500 {
            let w0: f64 = rng.gen_range(-2.0..2.0);
            let w1: f64 = rng.gen_range(-2.0..2.0);
            let v0: f64 = rng.gen_range(0.5..2.0);
            let v1: f64 = rng.gen_range(0.5..2.0);
            let rho: f64 = rng.gen_range(-0.95..0.95);
            let off = rho * (v0 * v1).sqrt();
            let w = Matrix::from_rows(&[&[w0, w1]]);
            let h = SymMatrix::from_upper_fn(2, |i, j| match (i, j) {
                (0, 0) => v0,
                (1, 1) => v1,
                _ => off,
            });
            let q = gptq_sweep(&w, &h, &c).unwrap();
            let want = reference_sweep_1x2([w0, w1], [[v0, off], [off, v1]], &c);
            assert_eq!([q.code(0, 0), q.code(0, 1)], want);
        }
    }

    #[test]
    fn greedy_gap_against_exhaustive_search() {
        // Exhaustive lattice search quantifies (does not bound) the gap
        // between the greedy sweep and the optimal code pair.
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let c = cfg(2, 2);
        let mut worst_gap = 0.0f64;
        let mut total_gap = 0.0f64;
        let trials = 200;
        for _ in 0..trials {
            let w = Matrix::from_rows(&[&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]]);
            let h = random_spd(2, &mut rng);
            let q = gptq_sweep(&w, &h, &c).unwrap();
            let greedy = sweep_loss_report(&w, &q, &h).unwrap();
            let scales = q.scales().clone();
            let mut best = f64::INFINITY;
            for c0 in c.quant.code_min()..=c.quant.code_max() {
                for c1 in c.quant.code_min()..=c.quant.code_max() {
                    let cand = QuantizedTensor::new(
                        1,
                        2,
                        c.quant,
                        vec![c0 as i8, c1 as i8],
                        scales.clone(),
                    );
                    let loss = sweep_loss_report(&w, &cand, &h).unwrap();
                    best = best.min(loss);
                }
            }
            assert!(best <= greedy + 1e-12, "exhaustive search must win");
            let gap = greedy - best;
            worst_gap = worst_gap.max(gap);
            total_gap += gap;
        }
        println!(
            "greedy-vs-optimal weighted-loss gap over {trials} 1x2 instances: mean {:.3e}, worst {:.3e}",
            total_gap / trials as f64,
            worst_gap
        );
    }

    #[test]
    fn rows_are_independent() {
        // The sweep of a matrix equals the sweeps of its rows taken one
        // at a time: rows never exchange information.
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let w = random_matrix(6, 8, &mut rng);
        let h = random_spd(8, &mut rng);
        let c = cfg(4, 4);
        let whole = gptq_sweep(&w, &h, &c).unwrap();
        for i in 0..6 {
            let row = Matrix::from_rows(&[w.row(i)]);
            let solo = gptq_sweep(&row, &h, &c).unwrap();
            for j in 0..8 {
                assert_eq!(solo.code(0, j), whole.code(i, j));
            }
        }
    }

    #[test]
    fn protected_columns_are_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let w = random_matrix(3, 6, &mut rng);
        let h = random_spd(6, &mut rng);
        let c = cfg(4, 3);
        let q = gptq_sweep_protected(&w, &h, &c, &[1, 4]).unwrap();
        for i in 0..3 {
            assert_eq!(q.code(i, 1), 0);
            assert_eq!(q.code(i, 4), 0);
        }
    }

    #[test]
    fn loss_report_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let w = random_matrix(2, 4, &mut rng);
        let h = random_spd(4, &mut rng);
        let q = gptq_sweep(&w, &h, &cfg(4, 4)).unwrap();
        let direct = crate::linalg::weighted_loss(&w.sub(&dequantize(&q)).unwrap(), &h).unwrap();
        assert_relative_eq!(
            sweep_loss_report(&w, &q, &h).unwrap(),
            direct,
            max_relative = 1e-15
        );
    }

    #[test]
    fn loss_report_unit_case() {
        // q encodes W - e1: the difference is the first basis row.
        let w = Matrix::from_rows(&[&[1.0, 0.0, 0.0]]);
        let q = QuantizedTensor::new(
            1,
            3,
            QuantConfig::new(4, 3),
            vec![0, 0, 0],
            Matrix::from_rows(&[&[1.0]]),
        );
        let h = SymMatrix::identity(3);
        assert_eq!(sweep_loss_report(&w, &q, &h).unwrap(), 1.0);
    }
}
