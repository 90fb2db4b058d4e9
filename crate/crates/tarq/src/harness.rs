//! Seeded synthetic experiment driver.
//!
//! Real calibration corpora need a model to produce activations; at desk
//! scale we replace them with a two-group Gaussian model whose common and
//! tail covariances can be rotated against each other. That misalignment
//! is the whole point: it makes the common/tail asymmetry visible in
//! reconstruction-loss space, where every mechanism here can be measured
//! without a decoder. All randomness flows from explicit seeds; a report
//! is a pure function of (spec, settings, methods).
//!
//! Each synthetic position also carries a synthetic lexical score so that
//! the calibration threshold and the evaluation threshold can move
//! independently: retagging at a different threshold changes which
//! positions count as tail for weighting or for loss reporting.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::TarqError;
use crate::gptq::SweepConfig;
use crate::lattice::QuantConfig;
use crate::linalg::SymMatrix;
use crate::matrix::Matrix;
use crate::pipeline::{
    ablation_variant, sequential_sweep_with, LayerResult, PipelineParams, Variant,
};
use crate::spqr::{spqr_tarq_layer, GateConfig};
use crate::stats::{accumulate_moments, rare_mass_share, Tag, TaggedActivations};
use crate::Result;

/// SPD covariance descriptor: eigenvalue spectrum rotated by `angle` in
/// the plane of the first two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovSpec {
    pub angle: f64,
    pub eigenvalues: Vec<f64>,
}

impl CovSpec {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Rotate a vector by `angle` in the (0, 1) plane.
    fn rotate(&self, v: &mut [f64]) {
        if v.len() < 2 || self.angle == 0.0 {
            return;
        }
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (v[0], v[1]);
        v[0] = c * a - s * b;
        v[1] = s * a + c * b;
    }

    /// Dense covariance matrix `Q diag(e) Qᵀ`.
    pub fn matrix(&self) -> SymMatrix {
        let n = self.dim();
        let mut cols = Vec::with_capacity(n);
        for (j, &e) in self.eigenvalues.iter().enumerate() {
            let mut axis = vec![0.0; n];
            axis[j] = 1.0;
            self.rotate(&mut axis);
            cols.push((axis, e));
        }
        SymMatrix::from_upper_fn(n, |i, j| {
            cols.iter().map(|(q, e)| e * q[i] * q[j]).sum()
        })
    }

    /// Draw one sample of `N(0, matrix())`.
    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&e| e.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.rotate(&mut x);
        x
    }
}

/// Description of one synthetic experiment instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    /// `d0, d1, ..., dL`: layer l maps dimension `d_l` to `d_{l+1}`.
    pub layer_dims: Vec<usize>,
    /// Calibration positions entering the first layer.
    pub positions: usize,
    /// Tail share in (0, 1); exactly `round(p * positions)` positions tag
    /// as tail.
    pub tail_share: f64,
    pub common_cov: CovSpec,
    pub tail_cov: CovSpec,
    pub noise_seed: u64,
}

impl SyntheticSpec {
    /// The canonical two-group benchmark: a three-layer chain in the
    /// 8..=16 dimension band, 7% tail share, and a tail covariance whose
    /// dominant axis is rotated a quarter turn away from the common one.
    /// Activation magnitudes sit well inside the saturating range of the
    /// interlayer nonlinearity; there the upstream rounding drift carries
    /// usable structure instead of tracking the lattice's edge-clamp
    /// shrinkage, which is what gives the residual step its signal.
    pub fn two_group_benchmark(seed: u64) -> Self {
        Self::two_group_with(vec![12, 16, 12, 8], 768, 0.07, seed)
    }

    /// Two-group benchmark with custom chain shape, position count, and
    /// tail share.
    pub fn two_group_with(
        layer_dims: Vec<usize>,
        positions: usize,
        tail_share: f64,
        seed: u64,
    ) -> Self {
        let dim = *layer_dims.first().unwrap_or(&2);
        let mut eigenvalues = vec![3.2; dim];
        eigenvalues[0] = 256.0;
        if dim > 1 {
            eigenvalues[1] = 32.0;
        }
        Self {
            layer_dims,
            positions,
            tail_share,
            common_cov: CovSpec {
                angle: 0.0,
                eigenvalues: eigenvalues.clone(),
            },
            tail_cov: CovSpec {
                angle: FRAC_PI_2,
                eigenvalues,
            },
            noise_seed: seed,
        }
    }

    /// Benchmark where tail positions spike on a channel whose weight
    /// column gets outlier protection. The spike inflates the tail trace
    /// and deflates the rebalancing coefficient below one, so without the
    /// gate the tail's residual direction (the second channel, which only
    /// the tail populates) is underweighted in the metric.
    pub fn outlier_conflict_benchmark(seed: u64) -> Self {
        let dim = 12;
        let mut common = vec![0.1; dim];
        common[2] = 8.0;
        common[3] = 1.0;
        let mut tail = vec![0.05; dim];
        tail[0] = 300.0;
        tail[1] = 8.0;
        Self {
            layer_dims: vec![dim, 12],
            positions: 256,
            tail_share: 0.07,
            common_cov: CovSpec {
                angle: 0.0,
                eigenvalues: common,
            },
            tail_cov: CovSpec {
                angle: 0.0,
                eigenvalues: tail,
            },
            noise_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(TarqError::BadSpec("need at least one layer".into()));
        }
        if self.layer_dims.iter().any(|&d| d < 2) {
            return Err(TarqError::BadSpec("layer dims must be >= 2".into()));
        }
        if !(self.tail_share > 0.0 && self.tail_share < 1.0) {
            return Err(TarqError::BadSpec(format!(
                "tail share {} outside (0, 1)",
                self.tail_share
            )));
        }
        if self.positions == 0 {
            return Err(TarqError::BadSpec("need at least one position".into()));
        }
        let d0 = self.layer_dims[0];
        for (name, cov) in [("common", &self.common_cov), ("tail", &self.tail_cov)] {
            if cov.dim() != d0 {
                return Err(TarqError::BadSpec(format!(
                    "{name} covariance dim {} != input dim {d0}",
                    cov.dim()
                )));
            }
            if cov.eigenvalues.iter().any(|&e| e <= 0.0) {
                return Err(TarqError::BadSpec(format!(
                    "{name} covariance needs positive eigenvalues"
                )));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

/// Everything [`generate_batch`] produces for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub layers: Vec<Matrix>,
    /// Inputs to the first layer, one per calibration position.
    pub inputs: Vec<Vec<f64>>,
    /// Group tags at the generation threshold.
    pub tags: Vec<Tag>,
    /// Synthetic lexical score per position: tail positions score in
    /// [1, 3), common positions in [3, 6), so retagging at threshold 3
    /// reproduces `tags` exactly.
    pub zipf_scores: Vec<f64>,
}

/// Threshold `score < k` partition of synthetic lexical scores.
pub fn retag_scores(scores: &[f64], k: f64) -> Vec<Tag> {
    scores
        .iter()
        .map(|&s| if s < k { Tag::Tail } else { Tag::Common })
        .collect()
}

/// Seeded, reproducible weights and calibration inputs.
pub fn generate_batch(spec: &SyntheticSpec) -> Result<SyntheticBatch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);

    let layers: Vec<Matrix> = (0..spec.layer_count())
        .map(|l| {
            let (rows, cols) = (spec.layer_dims[l + 1], spec.layer_dims[l]);
            // 4x the usual fan-in normalization: keeps chained
            // preactivations in the nonlinearity's saturating range.
            let scale = 4.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| {
                scale * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();

    let n = spec.positions;
    let n_tail = (spec.tail_share * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    let mut tags = vec![Tag::Common; n];
    for &i in order.iter().take(n_tail) {
        tags[i] = Tag::Tail;
    }

    let mut inputs = Vec::with_capacity(n);
    let mut zipf_scores = Vec::with_capacity(n);
    for &tag in &tags {
        let (cov, lo, hi) = match tag {
            Tag::Tail => (&spec.tail_cov, 1.0, 3.0),
            Tag::Common => (&spec.common_cov, 3.0, 6.0),
        };
        inputs.push(cov.sample(&mut rng));
        zipf_scores.push(rng.gen_range(lo..hi));
    }

    Ok(SyntheticBatch {
        layers,
        inputs,
        tags,
        zipf_scores,
    })
}

/// Method variants the driver can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodId {
    Gptq,
    RarebalOnly,
    ResidualOnly,
    Tarq,
    Spqr,
    SpqrTarq,
    SpqrTarqGated,
    /// Rarity reweighting (the default source): identical to `Tarq`.
    WeightRare,
    /// Size-matched random reweighting control.
    WeightRandom,
    /// Inverted control: upweight common positions.
    WeightCommon,
}

impl MethodId {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Gptq => "gptq",
            MethodId::RarebalOnly => "rarebal_only",
            MethodId::ResidualOnly => "residual_only",
            MethodId::Tarq => "tarq",
            MethodId::Spqr => "spqr",
            MethodId::SpqrTarq => "spqr_tarq",
            MethodId::SpqrTarqGated => "spqr_tarq_gated",
            MethodId::WeightRare => "rb",
            MethodId::WeightRandom => "nb",
            MethodId::WeightCommon => "cb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gptq" => MethodId::Gptq,
            "rarebal_only" => MethodId::RarebalOnly,
            "residual_only" => MethodId::ResidualOnly,
            "tarq" => MethodId::Tarq,
            "spqr" => MethodId::Spqr,
            "spqr_tarq" => MethodId::SpqrTarq,
            "spqr_tarq_gated" => MethodId::SpqrTarqGated,
            "rb" => MethodId::WeightRare,
            "nb" => MethodId::WeightRandom,
            "cb" => MethodId::WeightCommon,
            _ => return None,
        })
    }
}

/// Fully resolved knobs for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub sweep: SweepConfig,
    pub params: PipelineParams,
    pub gate: GateConfig,
    /// Threshold for the weighting partition.
    pub zipf_calib_k: f64,
    /// Threshold for the loss-reporting partition.
    pub zipf_eval_k: f64,
    /// Harness-level seed (random reweighting control).
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::new(QuantConfig::new(4, 8), 0.01),
            params: PipelineParams::default(),
            gate: GateConfig::default(),
            zipf_calib_k: 3.0,
            zipf_eval_k: 3.0,
            seed: 0,
        }
    }
}

/// Config echo embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub bits: u32,
    pub group_size: usize,
    pub scale_floor: f64,
    pub percdamp: f64,
    pub cost_ratio_c: f64,
    pub eps_rel: f64,
    pub delta: f64,
    pub zipf_calib_k: f64,
    pub zipf_eval_k: f64,
    pub outlier_fraction: f64,
    pub gate_threshold: f64,
    pub base_damp: f64,
    pub seed: u64,
    pub spec: SyntheticSpec,
}

impl ConfigEcho {
    pub fn new(spec: &SyntheticSpec, settings: &RunSettings) -> Self {
        Self {
            bits: settings.sweep.quant.bits,
            group_size: settings.sweep.quant.group_size,
            scale_floor: settings.sweep.quant.scale_floor,
            percdamp: settings.sweep.percdamp,
            cost_ratio_c: settings.params.cost_ratio_c,
            eps_rel: settings.params.eps_rel,
            delta: settings.params.delta,
            zipf_calib_k: settings.zipf_calib_k,
            zipf_eval_k: settings.zipf_eval_k,
            outlier_fraction: settings.gate.outlier_fraction,
            gate_threshold: settings.gate.gate_threshold,
            base_damp: settings.gate.base_damp,
            seed: settings.seed,
            spec: spec.clone(),
        }
    }
}

/// Per-layer diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub rare_mass_share: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub common_loss: f64,
    pub tail_loss: f64,
    pub weighted_loss: f64,
}

/// One method's report over a layer chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: String,
    pub trials: usize,
    pub per_layer: Vec<LayerRecord>,
    pub config: ConfigEcho,
}

/// The position set a reweighting-source control upweights, or `None`
/// for methods that use the calibration partition directly.
///
/// The controls reuse the rare-derived coefficient; the question they
/// answer is whether it matters *where* that weight goes, so the weight
/// magnitude must match the rarity-directed run.
pub fn upweight_set(method: MethodId, tags: &[Tag], seed: u64) -> Option<Vec<bool>> {
    match method {
        MethodId::WeightRandom => {
            let n = tags.len();
            let n_tail = tags.iter().filter(|&&t| t == Tag::Tail).count();
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                let j = rng.gen_range(i..n);
                order.swap(i, j);
            }
            let mut set = vec![false; n];
            for &i in order.iter().take(n_tail) {
                set[i] = true;
            }
            Some(set)
        }
        MethodId::WeightCommon => Some(tags.iter().map(|&t| t == Tag::Common).collect()),
        _ => None,
    }
}

/// Solve one layer under a method. `set` is the custom upweight set for
/// the reweighting-source controls.
pub fn solve_layer(
    method: MethodId,
    w: &Matrix,
    batch: &TaggedActivations,
    settings: &RunSettings,
    set: Option<&[bool]>,
) -> Result<LayerResult> {
    let variant = |v: Variant| ablation_variant(w, batch, &settings.sweep, v, &settings.params);
    match method {
        MethodId::Gptq => variant(Variant::Gptq),
        MethodId::RarebalOnly => variant(Variant::RarebalOnly),
        MethodId::ResidualOnly => variant(Variant::ResidualOnly),
        MethodId::Tarq | MethodId::WeightRare => variant(Variant::Tarq),
        MethodId::WeightRandom | MethodId::WeightCommon => {
            // The rare-derived coefficient lands on the control set.
            let set = set.expect("reweighting controls carry a position set");
            let moments = accumulate_moments(batch)?;
            let eps = settings.params.eps_rel * moments.h_common.trace();
            let rb = crate::stats::rarebal_metric(&moments, settings.params.cost_ratio_c, eps);
            let weights: Vec<f64> = set
                .iter()
                .map(|&in_set| if in_set { rb.lambda } else { 1.0 })
                .collect();
            let metric = crate::stats::RarebalMetric {
                h_rb: crate::spqr::weighted_moment(batch, &weights),
                lambda: rb.lambda,
                cost_ratio_c: settings.params.cost_ratio_c,
                eps,
            };
            crate::pipeline::solve_under_metric(
                w,
                &moments,
                metric,
                &settings.sweep,
                &settings.params,
                true,
            )
        }
        MethodId::Spqr => spqr_tarq_layer(
            w,
            batch,
            &settings.sweep,
            &settings.params,
            &settings.gate,
            false,
            false,
        ),
        MethodId::SpqrTarq => spqr_tarq_layer(
            w,
            batch,
            &settings.sweep,
            &settings.params,
            &settings.gate,
            true,
            false,
        ),
        MethodId::SpqrTarqGated => spqr_tarq_layer(
            w,
            batch,
            &settings.sweep,
            &settings.params,
            &settings.gate,
            true,
            true,
        ),
    }
}

/// Per-group sequential reconstruction error: the quantized layer on the
/// drifted stream against the full-precision layer on its own stream,
/// `sum_t |W x_fp_t - W_hat x_q_t|^2` split by tag. With equal streams
/// this is exactly the per-group quadratic loss of `W - W_hat`.
pub fn sequential_group_errors(
    w: &Matrix,
    w_hat: &Matrix,
    batch: &TaggedActivations,
) -> Result<(f64, f64)> {
    let mut sums = [0.0f64; 2];
    for pos in batch.positions() {
        let y_fp = w.matvec(&pos.x_fp)?;
        let y_q = w_hat.matvec(&pos.x_q)?;
        let sq: f64 = y_fp
            .iter()
            .zip(&y_q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sums[(pos.tag == Tag::Tail) as usize] += sq;
    }
    Ok((sums[0], sums[1]))
}

/// Run one method over a generated batch, reporting losses against the
/// evaluation partition.
fn run_method(
    method: MethodId,
    batch: &SyntheticBatch,
    settings: &RunSettings,
    config: &ConfigEcho,
) -> Result<RunReport> {
    let calib_tags = retag_scores(&batch.zipf_scores, settings.zipf_calib_k);
    let eval_tags = retag_scores(&batch.zipf_scores, settings.zipf_eval_k);
    let set = upweight_set(method, &calib_tags, settings.seed);

    let mut records = Vec::with_capacity(batch.layers.len());
    sequential_sweep_with(&batch.layers, &batch.inputs, &calib_tags, |l, w, b| {
        let result = solve_layer(method, w, b, settings, set.as_deref())?;
        // Report against the evaluation partition, which may differ from
        // the weighting partition.
        let eval_batch = b.retagged(&eval_tags)?;
        let eval_moments = accumulate_moments(&eval_batch)?;
        let (common_loss, tail_loss) =
            sequential_group_errors(w, &result.effective_weights(), &eval_batch)?;
        records.push(LayerRecord {
            layer: l,
            rare_mass_share: rare_mass_share(&eval_moments)?,
            lambda: result.metric.lambda,
            alpha: result.residual.alpha,
            common_loss,
            tail_loss,
            weighted_loss: common_loss + result.metric.lambda * tail_loss,
        });
        Ok(result)
    })?;

    Ok(RunReport {
        method: method.as_str().to_string(),
        trials: 1,
        per_layer: records,
        config: config.clone(),
    })
}

/// Generate one batch and run every requested method over it.
pub fn run_experiment(
    spec: &SyntheticSpec,
    methods: &[MethodId],
    settings: &RunSettings,
) -> Result<Vec<RunReport>> {
    let batch = generate_batch(spec)?;
    let config = ConfigEcho::new(spec, settings);
    methods
        .iter()
        .map(|&m| run_method(m, &batch, settings, &config))
        .collect()
}

/// Like [`run_experiment`], with per-layer records averaged over
/// `trials` seeded instances (trial `i` shifts both seeds by `i`). The
/// config echo reflects the base seeds.
pub fn run_experiment_averaged(
    spec: &SyntheticSpec,
    methods: &[MethodId],
    settings: &RunSettings,
    trials: usize,
) -> Result<Vec<RunReport>> {
    if trials <= 1 {
        return run_experiment(spec, methods, settings);
    }
    let mut averaged: Option<Vec<RunReport>> = None;
    for t in 0..trials {
        let mut spec_t = spec.clone();
        spec_t.noise_seed = spec.noise_seed.wrapping_add(t as u64);
        let mut settings_t = *settings;
        settings_t.seed = settings.seed.wrapping_add(t as u64);
        let reports = run_experiment(&spec_t, methods, &settings_t)?;
        match &mut averaged {
            None => averaged = Some(reports),
            Some(acc) => {
                for (a, r) in acc.iter_mut().zip(&reports) {
                    for (la, lr) in a.per_layer.iter_mut().zip(&r.per_layer) {
                        la.rare_mass_share += lr.rare_mass_share;
                        la.lambda += lr.lambda;
                        la.alpha += lr.alpha;
                        la.common_loss += lr.common_loss;
                        la.tail_loss += lr.tail_loss;
                        la.weighted_loss += lr.weighted_loss;
                    }
                }
            }
        }
    }
    let mut reports = averaged.expect("at least one trial ran");
    let n = trials as f64;
    for r in &mut reports {
        r.trials = trials;
        r.config = ConfigEcho::new(spec, settings);
        for l in &mut r.per_layer {
            l.rare_mass_share /= n;
            l.lambda /= n;
            l.alpha /= n;
            l.common_loss /= n;
            l.tail_loss /= n;
            l.weighted_loss /= n;
        }
    }
    Ok(reports)
}

/// Mean per-trial losses for one method (each trial contributes its mean
/// over layers).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub method: String,
    pub mean_common: f64,
    pub mean_tail: f64,
    pub mean_weighted: f64,
}

/// Fraction of paired trials where method `a`'s tail loss is at most
/// method `b`'s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseWin {
    pub a: String,
    pub b: String,
    pub tail_win_fraction: f64,
}

/// Aggregate of a multi-trial paired benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub trials: usize,
    pub summaries: Vec<TrialSummary>,
    pub wins: Vec<PairwiseWin>,
}

impl BenchmarkSummary {
    pub fn summary(&self, method: MethodId) -> &TrialSummary {
        self.summaries
            .iter()
            .find(|s| s.method == method.as_str())
            .expect("method was part of the benchmark")
    }

    pub fn tail_win_fraction(&self, a: MethodId, b: MethodId) -> f64 {
        self.wins
            .iter()
            .find(|w| w.a == a.as_str() && w.b == b.as_str())
            .map(|w| w.tail_win_fraction)
            .expect("pair was part of the benchmark")
    }
}

/// Run every method on `trials` seeded instances of the template (trial `i`
/// shifts both the noise seed and the harness seed by `i`) and aggregate
/// per-trial mean losses plus pairwise tail-loss win fractions.
pub fn run_paired_trials(
    template: &SyntheticSpec,
    methods: &[MethodId],
    settings: &RunSettings,
    trials: usize,
) -> Result<BenchmarkSummary> {
    let mut per_method: Vec<Vec<(f64, f64, f64)>> = vec![Vec::with_capacity(trials); methods.len()];
    for t in 0..trials {
        let mut spec = template.clone();
        spec.noise_seed = template.noise_seed.wrapping_add(t as u64);
        let mut s = *settings;
        s.seed = settings.seed.wrapping_add(t as u64);
        let reports = run_experiment(&spec, methods, &s)?;
        for (m, report) in reports.iter().enumerate() {
            let layers = report.per_layer.len() as f64;
            let common = report.per_layer.iter().map(|r| r.common_loss).sum::<f64>() / layers;
            let tail = report.per_layer.iter().map(|r| r.tail_loss).sum::<f64>() / layers;
            let weighted = report.per_layer.iter().map(|r| r.weighted_loss).sum::<f64>() / layers;
            per_method[m].push((common, tail, weighted));
        }
    }

    let summaries = methods
        .iter()
        .zip(&per_method)
        .map(|(&m, vals)| {
            let n = vals.len() as f64;
            TrialSummary {
                method: m.as_str().to_string(),
                mean_common: vals.iter().map(|v| v.0).sum::<f64>() / n,
                mean_tail: vals.iter().map(|v| v.1).sum::<f64>() / n,
                mean_weighted: vals.iter().map(|v| v.2).sum::<f64>() / n,
            }
        })
        .collect();

    let mut wins = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for (j, &b) in methods.iter().enumerate() {
            if i == j {
                continue;
            }
            let won = per_method[i]
                .iter()
                .zip(&per_method[j])
                .filter(|(x, y)| x.1 <= y.1)
                .count();
            wins.push(PairwiseWin {
                a: a.as_str().to_string(),
                b: b.as_str().to_string(),
                tail_win_fraction: won as f64 / trials as f64,
            });
        }
    }

    Ok(BenchmarkSummary {
        trials,
        summaries,
        wins,
    })
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    reports: &'a [RunReport],
}

/// Serialize reports to the stable text format (see docs/REPORT.md).
pub fn render_report(reports: &[RunReport]) -> Result<String> {
    if reports.is_empty() || reports.iter().any(|r| r.per_layer.is_empty()) {
        return Err(TarqError::EmptyReport);
    }
    let doc = ReportDocument { reports };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serialization is total");
    text.push('\n');
    Ok(text)
}

/// Write the rendered report; emission is byte-stable for fixed inputs.
pub fn emit_report(reports: &[RunReport], path: &Path) -> Result<()> {
    let text = render_report(reports)?;
    std::fs::write(path, text)?;
    Ok(())
}
