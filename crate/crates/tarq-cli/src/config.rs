//! Fully resolved run configuration, echoed verbatim into every report.

use std::path::PathBuf;

use serde::Serialize;
use tarq::gptq::SweepConfig;
use tarq::harness::RunSettings;
use tarq::lattice::QuantConfig;
use tarq::pipeline::PipelineParams;
use tarq::spqr::GateConfig;

/// Every knob a run resolves to. Paths are present only for file-based
/// workflows.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub bits: u32,
    pub group_size: usize,
    pub percdamp: f64,
    pub delta: f64,
    pub cost_ratio_c: f64,
    pub zipf_calib_k: f64,
    pub zipf_eval_k: f64,
    pub eps_rel: f64,
    pub variant: String,
    pub outlier_fraction: f64,
    pub tau: f64,
    pub rarity_gate_outliers: bool,
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub calib: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            group_size: 128,
            percdamp: 0.01,
            delta: 0.01,
            cost_ratio_c: 1.0,
            zipf_calib_k: 3.0,
            zipf_eval_k: 3.0,
            eps_rel: 1e-8,
            variant: "tarq".to_string(),
            outlier_fraction: 0.01,
            tau: 3.0,
            rarity_gate_outliers: false,
            seed: 0,
            weights: None,
            calib: None,
            tags: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Range checks that must precede [`RunConfig::settings`].
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=8).contains(&self.bits) {
            return Err(format!("--bits must be in [2, 8], got {}", self.bits));
        }
        if self.group_size == 0 {
            return Err("--group-size must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) || self.outlier_fraction == 0.0 {
            return Err(format!(
                "--outlier-fraction must be in (0, 1], got {}",
                self.outlier_fraction
            ));
        }
        Ok(())
    }

    /// Translate into the engine's settings bundle.
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            sweep: SweepConfig::new(QuantConfig::new(self.bits, self.group_size), self.percdamp),
            params: PipelineParams {
                cost_ratio_c: self.cost_ratio_c,
                eps_rel: self.eps_rel,
                delta: self.delta,
            },
            gate: GateConfig {
                outlier_fraction: self.outlier_fraction,
                gate_threshold: self.tau,
                base_damp: 0.01,
            },
            zipf_calib_k: self.zipf_calib_k,
            zipf_eval_k: self.zipf_eval_k,
            seed: self.seed,
        }
    }
}
