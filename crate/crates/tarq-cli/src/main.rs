//! `tarq`: tail-aware weight quantization workflows.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tarq_cli::commands::{cmd_ablate, cmd_pool, cmd_quantize, AblateArgs, AblateGrid, PoolArgs};
use tarq_cli::config::RunConfig;
use tarq_cli::CliError;

#[derive(Parser)]
#[command(
    name = "tarq",
    about = "Tail-aware post-training weight quantization",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Solver knobs shared by the quantize and ablate workflows.
#[derive(Args, Debug, Clone)]
struct Knobs {
    /// Code bit-width (packed output requires 4).
    #[arg(long, default_value_t = 4)]
    bits: u32,
    /// Input channels per scale group.
    #[arg(long, default_value_t = 128)]
    group_size: usize,
    /// Relative damping for the column sweep.
    #[arg(long, default_value_t = 0.01)]
    percdamp: f64,
    /// Relative damping for the residual-direction inverse.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Multiplier on the trace-equalized tail coefficient.
    #[arg(long, default_value_t = 1.0)]
    cost_ratio_c: f64,
    /// Relative epsilon for the tail-trace denominator.
    #[arg(long, default_value_t = 1e-8)]
    eps_rel: f64,
    /// Calibration-side rarity threshold.
    #[arg(long, default_value_t = 3.0)]
    zipf_calib_k: f64,
    /// Evaluation-side rarity threshold.
    #[arg(long, default_value_t = 3.0)]
    zipf_eval_k: f64,
    /// Fraction of weight columns kept at full precision (outlier
    /// variants).
    #[arg(long, default_value_t = 0.01)]
    outlier_fraction: f64,
    /// Outlier gate threshold, in units of the mean absolute activation.
    #[arg(long, default_value_t = 3.0)]
    tau: f64,
    /// Replace rarity weights by one on positions already covered by
    /// outlier columns.
    #[arg(long, default_value_t = false)]
    rarity_gate_outliers: bool,
    /// Seed for all run-level randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Knobs {
    fn into_config(self, variant: String) -> RunConfig {
        RunConfig {
            bits: self.bits,
            group_size: self.group_size,
            percdamp: self.percdamp,
            delta: self.delta,
            cost_ratio_c: self.cost_ratio_c,
            zipf_calib_k: self.zipf_calib_k,
            zipf_eval_k: self.zipf_eval_k,
            eps_rel: self.eps_rel,
            variant,
            outlier_fraction: self.outlier_fraction,
            tau: self.tau,
            rarity_gate_outliers: self.rarity_gate_outliers,
            seed: self.seed,
            ..RunConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Quantize weight layers against file-based calibration data.
    Quantize {
        /// TQT1 file with one 2-d fp-tensor section per layer.
        #[arg(long)]
        weights: PathBuf,
        /// TQT1 file whose first fp-tensor holds N x d calibration inputs.
        #[arg(long)]
        calib: PathBuf,
        /// Text file with one tag (common/tail) per calibration position.
        #[arg(long)]
        tags: PathBuf,
        /// Output directory for packed tensors and the report.
        #[arg(long)]
        out_dir: PathBuf,
        /// Solver variant: gptq, rarebal_only, residual_only, tarq, spqr,
        /// spqr_tarq, or spqr_tarq_gated.
        #[arg(long, default_value = "tarq")]
        variant: String,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Run a synthetic-benchmark ablation grid.
    Ablate {
        /// Grid axis: variants, cost-ratio, zipf, or weighting.
        #[arg(long)]
        grid: String,
        /// Report output path.
        #[arg(long)]
        out: PathBuf,
        /// Seeded trials averaged per grid cell.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Calibration positions per trial.
        #[arg(long, default_value_t = 768)]
        positions: usize,
        /// Tail share of calibration positions.
        #[arg(long, default_value_t = 0.07)]
        tail_share: f64,
        /// Chain dimensions, comma-separated (d0,d1,...,dL).
        #[arg(long, default_value = "12,16,12,8", value_delimiter = ',')]
        layer_dims: Vec<usize>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Build a rare-biased calibration pool from corpus manifests.
    Pool {
        /// Pool kind: r-top, r-mix, or r-cross.
        #[arg(long)]
        kind: String,
        /// Frequency table (word<TAB>count lines).
        #[arg(long)]
        freq_table: PathBuf,
        /// Corpus manifest (id<TAB>text lines); repeat for r-cross.
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// Pool size.
        #[arg(long)]
        n: usize,
        /// Seed for the sampled half of r-mix.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rarity threshold.
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Quantize {
            weights,
            calib,
            tags,
            out_dir,
            variant,
            knobs,
        } => {
            let mut cfg = knobs.into_config(variant);
            cfg.weights = Some(weights);
            cfg.calib = Some(calib);
            cfg.tags = Some(tags);
            cfg.out_dir = Some(out_dir);
            cmd_quantize(&cfg)
        }
        Cmd::Ablate {
            grid,
            out,
            trials,
            positions,
            tail_share,
            layer_dims,
            knobs,
        } => {
            let grid = AblateGrid::parse(&grid)
                .ok_or_else(|| CliError::Parse(format!("unknown grid {grid:?}")))?;
            cmd_ablate(&AblateArgs {
                grid,
                trials,
                positions,
                tail_share,
                layer_dims,
                out,
                base: knobs.into_config("tarq".to_string()),
            })
        }
        Cmd::Pool {
            kind,
            freq_table,
            corpora,
            n,
            seed,
            threshold,
            out,
        } => cmd_pool(&PoolArgs {
            kind,
            freq_table,
            corpora,
            n,
            seed,
            threshold,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
