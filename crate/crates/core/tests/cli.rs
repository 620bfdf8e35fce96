use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alloy_design::dataset::{dedup_median, ingest_csv, split, SplitConfig};
use alloy_design::surrogate::{score, SurrogateModel};
use alloy_design::Registry;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alloy-design"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

/// Synthetic registry plus dataset, and a manifest pointing at both.
fn synthetic_workspace(dir: &Path, n_alloys: usize, extra: &str) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "--out",
        s(&data),
        "--seed",
        "3",
        "synth",
        "--n-alloys",
        &n_alloys.to_string(),
    ]);
    let manifest = dir.join("run.toml");
    fs::write(
        &manifest,
        format!(
            "schema_version = 1\n\n[paths]\nelements = \"data/elements.csv\"\nenthalpy = \"data/enthalpy.csv\"\n\
             dataset = \"data/dataset.csv\"\n\n[models]\nmlp_epochs = 20\n{extra}"
        ),
    )
    .unwrap();
    manifest
}

#[test]
fn dedup_writes_one_row_per_group() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("dups.csv");
    let mut body = String::from("Ni,Ti,Cu,ms_celsius\n");
    // 7 distinct alloys, group sizes 1..=7
    for g in 0..7 {
        let ni = 40.0 + g as f64;
        for k in 0..=g {
            body.push_str(&format!("{ni},{},10,{}\n", 90.0 - ni, 20 * k));
        }
    }
    fs::write(&input, body).unwrap();
    let out = dir.path().join("out");
    ok(&["--out", s(&out), "dedup", "--input", s(&input)]);
    assert_eq!(data_rows(&out.join("dataset_dedup.csv")), 7);
}

#[test]
fn split_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_workspace(dir.path(), 60, "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "--manifest",
            s(&m),
            "--out",
            s(out),
            "--seed",
            "42",
            "split",
            "--fraction",
            "0.7",
        ]);
    }
    for f in ["train.csv", "test.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (tr, te) = (data_rows(&a.join("train.csv")), data_rows(&a.join("test.csv")));
    assert_eq!(tr, (0.7 * (tr + te) as f64).round() as usize);
}

#[test]
fn malformed_row_is_an_input_error_naming_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "Ni,Ti,ms_celsius\n50,50,10\n50,abc,12\n").unwrap();
    let o = run(&["--out", s(&dir.path().join("out")), "ingest", "--input", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");

    fs::write(&input, "Ni,Ti,ms_celsius\n50,40,10\n").unwrap();
    let o = run(&["--out", s(&dir.path().join("out")), "ingest", "--input", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));

    let o = run(&["--manifest", s(&dir.path().join("missing.toml")), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_metrics_match_library_scores() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_workspace(dir.path(), 80, "");
    let out = dir.path().join("out");
    ok(&["--manifest", s(&m), "--out", s(&out), "--seed", "5", "train"]);
    assert!(out.join("mlp_loss.csv").exists());

    let data_dir = dir.path().join("data");
    let reg = Registry::load(&data_dir.join("elements.csv"), &data_dir.join("enthalpy.csv")).unwrap();
    let data = dedup_median(&ingest_csv(&data_dir.join("dataset.csv"), &reg).unwrap());
    let (train, test) = split(&data, &SplitConfig::new(0.8, 5).unwrap()).unwrap();

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut seen = 0;
    for line in metrics.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let model = SurrogateModel::load(&out.join("models").join(format!("{}.json", cells[0]))).unwrap();
        let d = if cells[1] == "train" { &train } else { &test };
        let sc = score(&model, d).unwrap();
        assert_eq!(cells[2].parse::<f64>().unwrap(), sc.r_squared, "{line}");
        assert_eq!(cells[3].parse::<f64>().unwrap(), sc.mae, "{line}");
        seen += 1;
    }
    assert_eq!(seen, 4);

    // evaluate reproduces the same numbers from the saved file
    ok(&[
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "--seed",
        "5",
        "evaluate",
        "--model",
        s(&out.join("models/trees.json")),
    ]);
    let eval = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    let trees: Vec<&str> = metrics.lines().filter(|l| l.starts_with("trees,")).collect();
    assert_eq!(eval.lines().skip(1).collect::<Vec<_>>(), trees);
}

#[test]
fn weight_sweep_writes_one_summary_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_workspace(dir.path(), 60, "\n[experiment]\nkind = \"sweep\"\nrestarts = 2\n");
    let out = dir.path().join("out");
    ok(&[
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "experiment",
        "--optimizer",
        "grad",
    ]);
    assert_eq!(data_rows(&out.join("sweep_summary.csv")), 3);
    assert!(out.join("runs.csv").exists());
}

#[test]
fn restart_count_is_recorded_in_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_workspace(dir.path(), 80, "");
    let out = dir.path().join("out");
    ok(&[
        "--manifest",
        s(&m),
        "--out",
        s(&out),
        "optimize",
        "--restarts",
        "50",
        "--lambda1",
        "0",
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["restarts"], 50);
    assert_eq!(meta["command"], "optimize");
    assert_eq!(data_rows(&out.join("multistart.csv")), 50);
    let resolved = fs::read_to_string(out.join("manifest.resolved.toml")).unwrap();
    assert!(resolved.contains("restarts = 50"), "{resolved}");

    let o = run(&["--manifest", s(&m), "--out", s(&out), "optimize", "--restarts", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_scatter_agrees_with_its_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic_workspace(dir.path(), 80, "");
    let out = dir.path().join("out");
    ok(&["--manifest", s(&m), "--out", s(&out), "report"]);
    let reports = out.join("reports");
    for f in [
        "cost_histogram.csv",
        "feature_correlation.csv",
        "pca_model.csv",
        "feature_importance.csv",
    ] {
        assert!(reports.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(reports.join("model_metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let scatter = fs::read_to_string(reports.join(format!("scatter_{}_{}.csv", cells[0], cells[1]))).unwrap();
        let pairs: Vec<(f64, f64)> = scatter
            .lines()
            .skip(1)
            .map(|l| {
                let (t, p) = l.split_once(',').unwrap();
                (t.parse().unwrap(), p.parse().unwrap())
            })
            .collect();
        let n = pairs.len() as f64;
        let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let ss_res: f64 = pairs.iter().map(|(t, p)| (t - p).powi(2)).sum();
        let ss_tot: f64 = pairs.iter().map(|(t, _)| (t - mean).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        let stated: f64 = cells[2].parse().unwrap();
        assert!((r2 - stated).abs() < 1e-12, "{line}: recomputed {r2}");
    }
}
