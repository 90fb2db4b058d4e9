//! End-to-end tests of the `tarq` binary: workflows, file outputs, exit
//! codes, and determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

use tarq_cli::format::{section_from_matrix, Section, TensorFile};
use tarq::Matrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tarq"))
}

/// A weights file whose single layer is lattice-exact at scale 0.5: each
/// group of four spans the full code range on dyadic values.
fn lattice_exact_layer() -> Matrix {
    let s = 0.5;
    let rows: Vec<Vec<f64>> = [
        [-8.0, -3.0, 2.0, 7.0],
        [-8.0, 0.0, 3.0, 7.0],
        [-8.0, -1.0, 5.0, 7.0],
    ]
    .iter()
    .map(|r| r.iter().map(|c| s * c).collect())
    .collect();
    Matrix::from_rows(&[&rows[0], &rows[1], &rows[2]])
}

fn write_weights(path: &Path, layers: &[Matrix]) {
    let file = TensorFile {
        sections: layers.iter().map(section_from_matrix).collect(),
    };
    file.save(path).unwrap();
}

fn write_calib(path: &Path, rows: usize, cols: usize, scale: f64) {
    // Deterministic pseudo-random activations, no RNG dependency.
    let m = Matrix::from_fn(rows, cols, |i, j| {
        let x = ((i * 31 + j * 17 + 7) % 101) as f64 / 101.0;
        scale * (x - 0.5) * 2.0
    });
    write_weights(path, &[m]);
}

fn write_tags(path: &Path, n: usize, tail_every: usize) {
    let mut text = String::new();
    for t in 0..n {
        text.push_str(if t % tail_every == 0 { "tail\n" } else { "common\n" });
    }
    std::fs::write(path, text).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
    weights: PathBuf,
    calib: PathBuf,
    tags: PathBuf,
}

fn fixture(layers: &[Matrix], positions: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("weights.tqt");
    let calib = dir.path().join("calib.tqt");
    let tags = dir.path().join("tags.txt");
    write_weights(&weights, layers);
    write_calib(&calib, positions, layers[0].cols(), 1.0);
    write_tags(&tags, positions, 5);
    Fixture {
        dir,
        weights,
        calib,
        tags,
    }
}

fn run_quantize(f: &Fixture, out: &str, extra: &[&str]) -> std::process::Output {
    let out_dir = f.dir.path().join(out);
    bin()
        .args([
            "quantize",
            "--weights",
            f.weights.to_str().unwrap(),
            "--calib",
            f.calib.to_str().unwrap(),
            "--tags",
            f.tags.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn quantize_lattice_exact_roundtrips_bit_exactly() {
    let w = lattice_exact_layer();
    let f = fixture(std::slice::from_ref(&w), 40);
    let out = run_quantize(&f, "out", &["--variant", "gptq", "--bits", "4", "--group-size", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let packed = TensorFile::load(&f.dir.path().join("out/layer_000.tqt")).unwrap();
    let Section::PackedQuant {
        bits,
        group,
        rows,
        cols,
        scales,
        packed,
    } = &packed.sections[0]
    else {
        panic!("expected packed section");
    };
    assert_eq!((*bits, *group), (4, 4));
    // Dequantize from the file exactly as a loader would.
    let (rows, cols) = (*rows as usize, *cols as usize);
    let bytes_per_row = cols.div_ceil(2);
    for i in 0..rows {
        for j in 0..cols {
            let byte = packed[i * bytes_per_row + j / 2];
            let nib = if j % 2 == 0 { byte & 0x0F } else { byte >> 4 };
            let code = ((nib << 4) as i8) >> 4;
            let scale = scales[i * cols.div_ceil(4) + j / 4];
            let got = scale * code as f32;
            let want = w[(i, j)] as f32;
            assert_eq!(got.to_bits(), want.to_bits(), "element ({i}, {j})");
        }
    }
}

#[test]
fn quantize_no_drift_tarq_equals_rarebal_only() {
    // Single layer means the streams never diverge, so the full pass
    // collapses to the metric-only pass and output files match.
    let f = fixture(&[lattice_exact_layer()], 60);
    let a = run_quantize(&f, "a", &["--variant", "tarq", "--group-size", "4"]);
    let b = run_quantize(&f, "b", &["--variant", "rarebal_only", "--group-size", "4"]);
    assert!(a.status.success() && b.status.success());
    let fa = std::fs::read(f.dir.path().join("a/layer_000.tqt")).unwrap();
    let fb = std::fs::read(f.dir.path().join("b/layer_000.tqt")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn quantize_repeated_runs_are_byte_identical() {
    let layers = vec![
        Matrix::from_fn(6, 8, |i, j| ((i * 13 + j * 7) % 19) as f64 / 4.0 - 2.0),
        Matrix::from_fn(5, 6, |i, j| ((i * 11 + j * 5) % 23) as f64 / 5.0 - 2.0),
    ];
    let f = fixture(&layers, 50);
    let args = ["--variant", "spqr_tarq", "--rarity-gate-outliers", "--group-size", "4", "--seed", "9"];
    let names = ["layer_000.tqt", "layer_001.tqt", "report.json"];
    let a = run_quantize(&f, "a", &args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first: Vec<Vec<u8>> = names
        .iter()
        .map(|n| std::fs::read(f.dir.path().join("a").join(n)).unwrap())
        .collect();
    let b = run_quantize(&f, "a", &args);
    assert!(b.status.success());
    for (name, before) in names.iter().zip(&first) {
        let after = std::fs::read(f.dir.path().join("a").join(name)).unwrap();
        assert_eq!(&after, before, "{name} differs between runs");
    }
    // The gated spqr run records a sidecar section for protected columns.
    let packed = TensorFile::load(&f.dir.path().join("a/layer_000.tqt")).unwrap();
    assert!(matches!(packed.sections[1], Section::FpColumns { .. }));
}

#[test]
fn quantize_parse_failures_exit_2() {
    let f = fixture(&[lattice_exact_layer()], 20);
    // Corrupt the weights file.
    std::fs::write(&f.weights, b"not a tensor file").unwrap();
    let out = run_quantize(&f, "out", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:"), "stderr: {err}");

    // Missing file is also an input failure.
    let g = fixture(&[lattice_exact_layer()], 20);
    std::fs::remove_file(&g.calib).unwrap();
    let out = run_quantize(&g, "out", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quantize_numeric_failure_exits_3() {
    // All-zero calibration gives a zero metric whose relative damping is
    // also zero: the factorization must report a singular metric.
    let f = fixture(&[lattice_exact_layer()], 20);
    write_calib(&f.calib, 20, 4, 0.0);
    let out = run_quantize(&f, "out", &["--group-size", "4"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular"));
}

#[test]
fn quantize_rejects_non_4bit_packing() {
    let f = fixture(&[lattice_exact_layer()], 20);
    let out = run_quantize(&f, "out", &["--bits", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_knobs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.json");
    for args in [
        ["--bits", "9"],
        ["--group-size", "0"],
        ["--outlier-fraction", "0.0"],
    ] {
        let out = bin()
            .args(["ablate", "--grid", "variants", "--positions", "32"])
            .args(["--layer-dims", "4,4"])
            .args(["--out", out_path.to_str().unwrap()])
            .args(args)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "args: {args:?}");
    }
}

fn write_pool_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let freq = dir.join("freq.tsv");
    std::fs::write(&freq, "common\t999000000\npad\t1000000\n").unwrap();
    let corpus = dir.join("corpus.tsv");
    let mut text = String::new();
    for k in 0..200 {
        let rare: Vec<String> = (0..k.min(10)).map(|i| format!("rare{i}")).collect();
        let mut words = rare.join(" ");
        for _ in k.min(10)..10 {
            words.push_str(" common");
        }
        text.push_str(&format!("utt{k:03}\t{words}\n"));
    }
    std::fs::write(&corpus, text).unwrap();
    (freq, corpus)
}

#[test]
fn pool_r_top_ranks_whole_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (freq, corpus) = write_pool_fixture(dir.path());
    let out_path = dir.path().join("pool.txt");
    let out = bin()
        .args(["pool", "--kind", "r-top", "--n", "200"])
        .args(["--freq-table", freq.to_str().unwrap()])
        .args(["--corpus", corpus.to_str().unwrap()])
        .args(["--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ids: Vec<String> = std::fs::read_to_string(&out_path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(ids.len(), 200);
    // Density is non-increasing down the manifest; the ten densest
    // utterances tie and rank by index.
    assert_eq!(ids[0], "utt010");
    assert_eq!(ids[ids.len() - 1], "utt000");
}

#[test]
fn pool_r_mix_is_seed_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (freq, corpus) = write_pool_fixture(dir.path());
    let run = |out: &Path| {
        let st = bin()
            .args(["pool", "--kind", "r-mix", "--n", "64", "--seed", "7"])
            .args(["--freq-table", freq.to_str().unwrap()])
            .args(["--corpus", corpus.to_str().unwrap()])
            .args(["--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out).unwrap()
    };
    let a = run(&dir.path().join("a.txt"));
    let b = run(&dir.path().join("b.txt"));
    assert_eq!(a, b);
}

#[test]
fn pool_r_cross_counts_and_insufficient_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let (freq, corpus) = write_pool_fixture(dir.path());
    let out_path = dir.path().join("pool.txt");
    let out = bin()
        .args(["pool", "--kind", "r-cross", "--n", "128"])
        .args(["--freq-table", freq.to_str().unwrap()])
        .args(["--corpus", corpus.to_str().unwrap()])
        .args(["--corpus", corpus.to_str().unwrap()])
        .args(["--corpus", corpus.to_str().unwrap()])
        .args(["--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let n = std::fs::read_to_string(&out_path).unwrap().lines().count();
    assert_eq!(n, 128);

    // A corpus smaller than n exits 2.
    let small = dir.path().join("small.tsv");
    std::fs::write(&small, "u0\tcommon words here\n").unwrap();
    let out = bin()
        .args(["pool", "--kind", "r-top", "--n", "5"])
        .args(["--freq-table", freq.to_str().unwrap()])
        .args(["--corpus", small.to_str().unwrap()])
        .args(["--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn ablate_record_count(dir: &Path, grid: &str) -> usize {
    let out_path = dir.join(format!("{grid}.json"));
    let st = bin()
        .args(["ablate", "--grid", grid, "--positions", "96"])
        .args(["--layer-dims", "8,8", "--group-size", "8"])
        .args(["--out", out_path.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    doc["reports"].as_array().unwrap().len()
}

#[test]
fn ablate_grid_record_counts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ablate_record_count(dir.path(), "variants"), 4);
    assert_eq!(ablate_record_count(dir.path(), "cost-ratio"), 5);
    assert_eq!(ablate_record_count(dir.path(), "zipf"), 9);
    assert_eq!(ablate_record_count(dir.path(), "weighting"), 3);
}

#[test]
fn ablate_reports_echo_resolved_config_and_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let st = bin()
            .args(["ablate", "--grid", "variants", "--positions", "96"])
            .args(["--layer-dims", "8,8", "--group-size", "8", "--trials", "2"])
            .args(["--cost-ratio-c", "2.0", "--seed", "11"])
            .args(["--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out).unwrap()
    };
    let a = run(&dir.path().join("a.json"));
    let b = run(&dir.path().join("b.json"));
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let cfg = &doc["reports"][0]["config"];
    assert_eq!(cfg["cost_ratio_c"], 2.0);
    assert_eq!(cfg["seed"], 11);
    assert_eq!(doc["reports"][0]["trials"], 2);
}
