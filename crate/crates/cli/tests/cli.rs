use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn desk() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn evsuc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evsuc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Desk system with a short horizon and a single scenario per step.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    let text = format!(
        r#"include = ["{}"]

[simulation]
days = 1
quantiles = [0.5]
horizon = 2.0

[simulation.uc]
integer_depth = 4

[sweep]
ev_counts = [2000]
regimes = ["v2g"]
"#,
        desk().display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn mstg_writes_both_curves() {
    let out = TempDir::new().unwrap();
    let o = evsuc(&[
        "mstg",
        "--config",
        desk().to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.path().join("results.csv")).len(), 100);
    for t in ["1", "10"] {
        assert!(out.path().join(format!("plotdata/mstg_t{t}.csv")).exists());
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("summary.json")).unwrap()).unwrap();
    assert!(!summary.is_null());
}

#[test]
fn validate_reports_each_check() {
    let out = TempDir::new().unwrap();
    let o = evsuc(&[
        "validate",
        "--config",
        desk().to_str().unwrap(),
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    // the published fade coefficients exceed the linear-excess bound
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let checks: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(out.path().join("summary.json")).unwrap()).unwrap();
    let passed = |name: &str| {
        checks
            .iter()
            .find(|c| c["name"] == name)
            .and_then(|c| c["passed"].as_bool())
            .unwrap()
    };
    assert!(passed("rocof_floor"));
    assert!(passed("nadir_boundary_points"));
    assert!(passed("nadir_vs_swing_oracle"));
    assert!(passed("uc_step"));
    assert!(!passed("fade_linear_excess"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = evsuc(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let rows = csv_rows(&a.join("results.csv"));
    assert_eq!(rows.len(), 48);
    assert_eq!(
        fs::read(a.join("results.csv")).unwrap(),
        fs::read(b.join("results.csv")).unwrap()
    );
    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_slice(&fs::read(p.join("manifest.json")).unwrap()).unwrap()
    };
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert!(a.join("plotdata/dispatch_seed3.csv").exists());
}

#[test]
fn sweep_adds_the_benchmark() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sweep");
    let o = evsuc(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    let labels: Vec<&str> = rows.iter().map(|x| &x[col("case")]).collect();
    assert_eq!(labels, ["v2g_2000", "no_ev"]);
    assert!(rows[0][col("value_per_ev")].parse::<f64>().is_ok());
    assert!(rows[1][col("value_per_ev")].is_empty());
}

#[test]
fn bad_config_is_an_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[system]\nvoll = -1\n").unwrap();
    let o = evsuc(&[
        "validate",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
