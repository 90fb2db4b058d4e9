//! The three workflows behind the subcommands.

use std::path::{Path, PathBuf};

use serde::Serialize;

use tarq::harness::{
    emit_report, run_experiment_averaged, sequential_group_errors, solve_layer, upweight_set,
    LayerRecord, MethodId, RunSettings, SyntheticSpec,
};
use tarq::lattice::pack4;
use tarq::lexicon::{build_pool, parse_corpus, FreqTable, PoolKind};
use tarq::pipeline::sequential_sweep_with;
use tarq::stats::{accumulate_moments, rare_mass_share, Tag};
use tarq::Matrix;

use crate::config::RunConfig;
use crate::format::{matrix_from_section, Section, TensorFile};
use crate::CliError;

/// Report written next to the packed tensors of a quantize run.
#[derive(Debug, Serialize)]
struct QuantizeReport<'a> {
    config: &'a RunConfig,
    method: &'a str,
    per_layer: Vec<LayerRecord>,
}

fn parse_tags(path: &Path) -> Result<Vec<Tag>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let tag = match t.to_ascii_lowercase().as_str() {
            "common" | "c" | "0" => Tag::Common,
            "tail" | "t" | "1" => Tag::Tail,
            other => {
                return Err(CliError::Parse(format!(
                    "{}:{}: unknown tag {other:?} (expected common/tail)",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        tags.push(tag);
    }
    Ok(tags)
}

fn load_layers(path: &Path) -> Result<Vec<Matrix>, CliError> {
    let file = TensorFile::load(path)?;
    let mut layers = Vec::new();
    for section in &file.sections {
        if let Section::FpTensor { dims, .. } = section {
            if dims.len() != 2 {
                return Err(CliError::Parse(format!(
                    "{}: weight tensors must be 2-d, got {} dims",
                    path.display(),
                    dims.len()
                )));
            }
            layers.push(matrix_from_section(section).map_err(|e| {
                CliError::Parse(format!("{}: {e}", path.display()))
            })?);
        }
    }
    if layers.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no fp-tensor sections",
            path.display()
        )));
    }
    Ok(layers)
}

fn load_calib(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let m = load_layers(path)?
        .into_iter()
        .next()
        .expect("load_layers guarantees a section");
    Ok((0..m.rows()).map(|i| m.row(i).to_vec()).collect())
}

/// Packed-tensor section plus optional sidecar from one layer result.
fn layer_sections(result: &tarq::pipeline::LayerResult) -> Result<Vec<Section>, CliError> {
    let q = &result.quantized;
    let packed = pack4(q).map_err(|e| CliError::Parse(e.to_string()))?;
    let mut sections = vec![Section::PackedQuant {
        bits: q.config().bits,
        group: q.config().group_size as u32,
        rows: q.rows() as u64,
        cols: q.cols() as u64,
        scales: q.scales().as_slice().iter().map(|&s| s as f32).collect(),
        packed,
    }];
    if let Some(fp) = &result.fp_columns {
        sections.push(Section::FpColumns {
            rows: fp.values.rows() as u64,
            indices: fp.indices.iter().map(|&i| i as u64).collect(),
            values: fp.values.as_slice().iter().map(|&v| v as f32).collect(),
        });
    }
    Ok(sections)
}

fn effective_method(cfg: &RunConfig) -> Result<MethodId, CliError> {
    let method = MethodId::parse(&cfg.variant)
        .ok_or_else(|| CliError::Parse(format!("unknown variant {:?}", cfg.variant)))?;
    Ok(match (method, cfg.rarity_gate_outliers) {
        (MethodId::SpqrTarq, true) => MethodId::SpqrTarqGated,
        (m, _) => m,
    })
}

/// Quantize weight layers from a tensor file against file-supplied
/// calibration activations and tags. Writes one packed file per layer
/// plus a report into the output directory.
pub fn cmd_quantize(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate().map_err(CliError::Parse)?;
    if cfg.bits != 4 {
        return Err(CliError::Parse(format!(
            "packed output is 4-bit only, got --bits {}",
            cfg.bits
        )));
    }
    let weights_path = cfg
        .weights
        .as_ref()
        .ok_or_else(|| CliError::Parse("missing --weights".into()))?;
    let calib_path = cfg
        .calib
        .as_ref()
        .ok_or_else(|| CliError::Parse("missing --calib".into()))?;
    let tags_path = cfg
        .tags
        .as_ref()
        .ok_or_else(|| CliError::Parse("missing --tags".into()))?;
    let out_dir = cfg
        .out_dir
        .as_ref()
        .ok_or_else(|| CliError::Parse("missing --out-dir".into()))?;

    let layers = load_layers(weights_path)?;
    let inputs = load_calib(calib_path)?;
    let tags = parse_tags(tags_path)?;
    if tags.len() != inputs.len() {
        return Err(CliError::Parse(format!(
            "{} tags for {} calibration positions",
            tags.len(),
            inputs.len()
        )));
    }

    let method = effective_method(cfg)?;
    let settings: RunSettings = cfg.settings();
    let set = upweight_set(method, &tags, settings.seed);

    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(layers.len());
    let mut outputs: Vec<(PathBuf, TensorFile)> = Vec::new();
    sequential_sweep_with(&layers, &inputs, &tags, |l, w, batch| {
        let result = solve_layer(method, w, batch, &settings, set.as_deref())?;
        let moments = accumulate_moments(batch)?;
        let (common_loss, tail_loss) =
            sequential_group_errors(w, &result.effective_weights(), batch)?;
        records.push(LayerRecord {
            layer: l,
            rare_mass_share: rare_mass_share(&moments)?,
            lambda: result.metric.lambda,
            alpha: result.residual.alpha,
            common_loss,
            tail_loss,
            weighted_loss: common_loss + result.metric.lambda * tail_loss,
        });
        let file = TensorFile {
            sections: layer_sections(&result).map_err(|e| {
                tarq::TarqError::BadSpec(e.message().to_string())
            })?,
        };
        outputs.push((out_dir.join(format!("layer_{l:03}.tqt")), file));
        Ok(result)
    })?;

    for (path, file) in &outputs {
        file.save(path)?;
    }
    for r in &records {
        println!(
            "layer {}: lambda {:.6e}, alpha {:+.6e}, common {:.6e}, tail {:.6e}",
            r.layer, r.lambda, r.alpha, r.common_loss, r.tail_loss
        );
    }
    let report = QuantizeReport {
        config: cfg,
        method: method.as_str(),
        per_layer: records,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization is total");
    text.push('\n');
    std::fs::write(out_dir.join("report.json"), text)?;
    Ok(())
}

/// Pool construction arguments.
#[derive(Debug, Clone)]
pub struct PoolArgs {
    pub kind: String,
    pub freq_table: PathBuf,
    pub corpora: Vec<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub threshold: f64,
    pub out: PathBuf,
}

/// Build a rare-biased calibration pool and write the selected utterance
/// ids in rank order.
pub fn cmd_pool(args: &PoolArgs) -> Result<(), CliError> {
    let kind = match args.kind.replace('-', "_").as_str() {
        "r_top" => PoolKind::RTop,
        "r_mix" => PoolKind::RMix,
        "r_cross" => PoolKind::RCross,
        other => {
            return Err(CliError::Parse(format!(
                "unknown pool kind {other:?} (expected r-top, r-mix, or r-cross)"
            )))
        }
    };
    let table = FreqTable::load(&args.freq_table).map_err(CliError::from)?;
    let mut sources = Vec::with_capacity(args.corpora.len());
    for path in &args.corpora {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        sources.push(parse_corpus(&text).map_err(CliError::from)?);
    }
    let pool = build_pool(&sources, kind, args.n, args.seed, &table, args.threshold)
        .map_err(CliError::from)?;
    let mut out = String::new();
    for utt in &pool {
        out.push_str(&utt.id);
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!("wrote {} utterance ids to {}", pool.len(), args.out.display());
    Ok(())
}

/// Grid axes for the ablation workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateGrid {
    /// gptq, rarebal_only, residual_only, tarq.
    Variants,
    /// Cost ratio c in {0.25, 0.5, 1, 2, 4}.
    CostRatio,
    /// (calibration, evaluation) threshold pairs over {2, 3, 4}.
    Zipf,
    /// Reweighting sources rb, nb, cb.
    Weighting,
}

impl AblateGrid {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.replace('_', "-").as_str() {
            "variants" => AblateGrid::Variants,
            "cost-ratio" | "c" => AblateGrid::CostRatio,
            "zipf" | "k" => AblateGrid::Zipf,
            "weighting" => AblateGrid::Weighting,
            _ => return None,
        })
    }
}

/// Ablation workflow arguments.
#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub grid: AblateGrid,
    pub trials: usize,
    pub positions: usize,
    pub tail_share: f64,
    pub layer_dims: Vec<usize>,
    pub out: PathBuf,
    pub base: RunConfig,
}

/// Run one grid of the synthetic benchmark and emit a report with one
/// record per grid cell, row-major over the declared axes.
pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    args.base.validate().map_err(CliError::Parse)?;
    if args.layer_dims.len() < 2 || args.layer_dims.iter().any(|&d| d < 2) {
        return Err(CliError::Parse(format!(
            "--layer-dims needs at least two entries, all >= 2, got {:?}",
            args.layer_dims
        )));
    }
    let spec = SyntheticSpec::two_group_with(
        args.layer_dims.clone(),
        args.positions,
        args.tail_share,
        args.base.seed,
    );
    let settings = args.base.settings();
    let trials = args.trials.max(1);

    let mut reports = Vec::new();
    match args.grid {
        AblateGrid::Variants => {
            let methods = [
                MethodId::Gptq,
                MethodId::RarebalOnly,
                MethodId::ResidualOnly,
                MethodId::Tarq,
            ];
            reports = run_experiment_averaged(&spec, &methods, &settings, trials)?;
        }
        AblateGrid::Weighting => {
            let methods = [
                MethodId::WeightRare,
                MethodId::WeightRandom,
                MethodId::WeightCommon,
            ];
            reports = run_experiment_averaged(&spec, &methods, &settings, trials)?;
        }
        AblateGrid::CostRatio => {
            for c in [0.25, 0.5, 1.0, 2.0, 4.0] {
                let mut s = settings;
                s.params.cost_ratio_c = c;
                reports.extend(run_experiment_averaged(&spec, &[MethodId::Tarq], &s, trials)?);
            }
        }
        AblateGrid::Zipf => {
            for k_c in [2.0, 3.0, 4.0] {
                for k_e in [2.0, 3.0, 4.0] {
                    let mut s = settings;
                    s.zipf_calib_k = k_c;
                    s.zipf_eval_k = k_e;
                    reports.extend(run_experiment_averaged(
                        &spec,
                        &[MethodId::Tarq],
                        &s,
                        trials,
                    )?);
                }
            }
        }
    }

    emit_report(&reports, &args.out).map_err(CliError::from)?;
    for r in &reports {
        for l in &r.per_layer {
            println!(
                "{} layer {}: lambda {:.6e}, alpha {:+.6e}, common {:.6e}, tail {:.6e}",
                r.method, l.layer, l.lambda, l.alpha, l.common_loss, l.tail_loss
            );
        }
    }
    println!("wrote {} records to {}", reports.len(), args.out.display());
    Ok(())
}
