//! End-to-end runs of the gmf-heat binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use gmf_heat::io::{from_json, to_json, SCHEMA_VERSION};
use gmf_heat_cli::commands::{EstimateFile, Manifest, McReport};

const BIN: &str = env!("CARGO_BIN_EXE_gmf-heat");

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn run_ok(args: &[&str]) {
    let (code, err) = run(args);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn config(n_space: usize, replicates: u64, format: &str, target: &str, times: &str) -> String {
    format!(
        r#"{{
            "model": {{"h1": 0.3, "h2": 0.6, "sigma1_sq": 1.0, "sigma2_sq": 2.0}},
            "grid": {{"times": {times}, "delta": 1, "n_space": {n_space}}},
            "estimation": {target},
            "replicates": {replicates},
            "seed": 17,
            "output": {{"format": "{format}"}}
        }}"#
    )
}

const H1: &str = r#"{"target": "h1", "h2": 0.6}"#;
const SIGMAS: &str = r#"{"target": "sigmas", "h1": 0.3, "h2": 0.6}"#;

#[test]
fn simulate_is_deterministic_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(8, 3, "csv", SIGMAS, "[1, 2]"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        run_ok(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    for name in ["replicate_000000.csv", "replicate_000001.csv", "replicate_000002.csv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let csv = std::fs::read_to_string(a.join("replicate_000000.csv")).unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "t,x,value");
    assert_eq!(data.len(), 1 + 16);

    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.schema_version, SCHEMA_VERSION);
    assert_eq!(manifest.files.len(), 3);
    let back: Manifest = serde_json::from_str(&serde_json::to_string(&manifest).unwrap()).unwrap();
    assert_eq!(back, manifest);
}

#[test]
fn json_samples_load_back_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(8, 1, "json", SIGMAS, "[1, 2]"));
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(tmp.path().join("replicate_000000.json")).unwrap();
    let sample = from_json(&text).unwrap();
    assert_eq!(to_json(&sample).unwrap().trim_end(), text.trim_end());
    assert_eq!(from_json(&to_json(&sample).unwrap()).unwrap(), sample);
}

#[test]
fn estimate_recovers_h1_on_a_large_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let body = config(4096, 1, "csv", H1, "[1, 2, 4]").replace(r#""sigma2_sq": 2.0"#, r#""sigma2_sq": 1.0"#);
    let cfg = write_config(tmp.path(), &body);
    let c = cfg.to_str().unwrap();
    let out = tmp.path().to_str().unwrap();
    run_ok(&["simulate", "--config", c, "--out", out]);
    let input = tmp.path().join("replicate_000000.csv");
    run_ok(&[
        "estimate",
        "--config",
        c,
        "--out",
        out,
        "--input",
        input.to_str().unwrap(),
    ]);
    let est: EstimateFile =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("estimate.json")).unwrap()).unwrap();
    let h1 = est.report.h1.unwrap();
    assert!((h1.estimate - 0.3).abs() <= 0.1, "{h1:?}");
    assert!(h1.ci.lower < h1.ci.upper);
    assert!(est.report.zeta_sq.unwrap() > 0.0);
}

#[test]
fn malformed_inputs_exit_with_format_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(4, 1, "csv", H1, "[1, 2, 4]"));
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "t,value\n1,0.5\n").unwrap();
    let (code, _) = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    let missing = tmp.path().join("nope.csv");
    let (code, _) = run(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(code, 4);
    let (code, _) = run(&["simulate", "--config", tmp.path().join("none.json").to_str().unwrap()]);
    assert_eq!(code, 2);
    let (code, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn single_replicate_mc_has_no_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(32, 1, "csv", SIGMAS, "[1, 2]"));
    run_ok(&[
        "mc",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let report: McReport =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("mc_report.json")).unwrap()).unwrap();
    let row = &report.rows[0];
    let s1 = &row.params["sigma1_sq"];
    assert_eq!(s1.n_estimates, 1);
    assert!(s1.sd.is_none() && s1.rmse.is_none());
    assert!(s1.mean.is_some());
    assert!(tmp.path().join("mc_summary.csv").exists());
    assert!(tmp.path().join("mc_estimates.csv").exists());
}

#[test]
fn mc_summary_is_internally_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let body = config(64, 40, "json", SIGMAS, "[1, 2]").replace(r#""seed": 17"#, r#""seed": 17, "sweep": [32, 64]"#);
    let cfg = write_config(tmp.path(), &body);
    run_ok(&[
        "mc",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let report: McReport =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("mc_report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.n_space).collect::<Vec<_>>(), vec![32, 64]);
    for row in &report.rows {
        for p in row.params.values() {
            let (bias, sd, rmse) = (p.bias.unwrap(), p.sd.unwrap(), p.rmse.unwrap());
            assert!((rmse * rmse - bias * bias - sd * sd).abs() <= 1e-12 * rmse * rmse);
            let cov = p.coverage.unwrap();
            assert!((0.0..=1.0).contains(&cov));
        }
    }
}

#[test]
fn covtable_closed_form_matches_quadrature() {
    let tmp = tempfile::tempdir().unwrap();
    let body =
        config(8, 1, "csv", H1, "[0.5, 1, 2]").replace(r#""seed": 17"#, r#""seed": 17, "covtable": {"lags": 4}"#);
    let cfg = write_config(tmp.path(), &body);
    run_ok(&[
        "covtable",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(tmp.path().join("covtable.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows: Vec<(f64, f64, f64, f64, String)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let mut closed = 0;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.4 == "closed_form" {
            closed += 1;
            assert_eq!(b.4, "quadrature");
            assert_eq!((a.0, a.1, a.2), (b.0, b.1, b.2));
            assert!(((a.3 - b.3) / a.3).abs() <= 1e-5 || a.3 == 0.0, "{a:?} {b:?}");
        }
    }
    // 3 pairs with s = 0 plus 6 pairs t ≤ s
    assert_eq!(closed, 9);
    assert!(rows.iter().filter(|r| r.1 == 0.0).all(|r| r.3 == 0.0));
}
