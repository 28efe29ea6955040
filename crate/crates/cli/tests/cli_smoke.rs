//! End-to-end smoke tests for the command-line driver on a tiny
//! configuration: every subcommand runs, artifacts land where expected,
//! and the documented exit codes come back on bad input.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dctnn"))
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
[simulate]
dims = [10, 10, 10]
support_size = 8
refinement_shape = [2, 4]

[fit]
tucker_ranks = [3, 3, 3]
cp_rank = 5
hooi_iters = 3
als_iters = 5
epochs = 2

[conformal]
k_tr = 12
k_ca = 6
grid = 50

[selector]
k = 4
grid = 50
"#,
    )
    .unwrap();
    path
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn simulate_fixture(n: usize, seed: u64) -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = write_tiny_config(&root);
    let status = bin()
        .args([
            "simulate",
            "--out",
            root.join("data").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--n",
            &n.to_string(),
            "--seed",
            &seed.to_string(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    Workspace {
        _tmp: tmp,
        root,
        config,
    }
}

#[test]
fn simulate_writes_dataset_artifacts() {
    let ws = simulate_fixture(60, 3);
    for name in [
        "tensors.bin",
        "cores.bin",
        "udense.bin",
        "meta.csv",
        "config.json",
        "truth.json",
        "labeler.bin",
        "manifest.json",
    ] {
        assert!(
            ws.root.join("data").join(name).is_file(),
            "missing {name}"
        );
    }
    let meta = std::fs::read_to_string(ws.root.join("data/meta.csv")).unwrap();
    assert_eq!(meta.lines().count(), 61, "header plus one row per sample");
}

#[test]
fn simulate_same_seed_is_bit_identical() {
    let ws = simulate_fixture(60, 5);
    let out2 = ws.root.join("data2");
    let status = bin()
        .args([
            "simulate",
            "--out",
            out2.to_str().unwrap(),
            "--config",
            ws.config.to_str().unwrap(),
            "--n",
            "60",
            "--seed",
            "5",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["tensors.bin", "cores.bin", "udense.bin", "meta.csv"] {
        let a = std::fs::read(ws.root.join("data").join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn full_pipeline_runs_and_validates() {
    let ws = simulate_fixture(60, 7);
    let data = ws.root.join("data");
    let config = ws.config.to_str().unwrap().to_string();

    for (structure, out) in [("tucker", "fit_t"), ("cp", "fit_c")] {
        let status = bin()
            .args([
                "fit",
                "--dataset",
                data.to_str().unwrap(),
                "--out",
                ws.root.join(out).to_str().unwrap(),
                "--config",
                &config,
                "--structure",
                structure,
                "--seed",
                "11",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "{structure} fit failed");
        for name in [
            "model.json",
            "mean.bin",
            "net.bin",
            "net.json",
            "fit.json",
            "residuals.csv",
            "metrics.json",
            "manifest.json",
        ] {
            assert!(ws.root.join(out).join(name).is_file(), "missing {name}");
        }
    }

    let status = bin()
        .args([
            "uq",
            "--fit",
            ws.root.join("fit_t").to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            ws.root.join("uq").to_str().unwrap(),
            "--config",
            &config,
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let band = std::fs::read_to_string(ws.root.join("uq/band.csv")).unwrap();
    let lines: Vec<&str> = band.lines().collect();
    assert_eq!(
        lines[0],
        "lambda,sens,sens_lo,sens_hi,spec,spec_lo,spec_hi"
    );
    assert_eq!(lines.len(), 51, "header plus one row per grid threshold");
    assert!(ws.root.join("uq/auc.json").is_file());

    // Degenerate smoother: zero-width probability intervals collapse the
    // band onto the point curves.
    let status = bin()
        .args([
            "uq",
            "--fit",
            ws.root.join("fit_t").to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            ws.root.join("uq_deg").to_str().unwrap(),
            "--config",
            &config,
            "--self-smoother",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let band = std::fs::read_to_string(ws.root.join("uq_deg/band.csv")).unwrap();
    for line in band.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[1], f[2], "sens_lo must equal sens");
        assert_eq!(f[1], f[3], "sens_hi must equal sens");
        assert_eq!(f[4], f[5], "spec_lo must equal spec");
        assert_eq!(f[4], f[6], "spec_hi must equal spec");
    }

    let status = bin()
        .args([
            "select",
            "--fit-a",
            ws.root.join("fit_t").to_str().unwrap(),
            "--fit-b",
            ws.root.join("fit_c").to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            ws.root.join("sel").to_str().unwrap(),
            "--config",
            &config,
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["decision.json", "dband_forward.csv", "dband_reverse.csv"] {
        assert!(ws.root.join("sel").join(name).is_file(), "missing {name}");
    }
    let decision: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("sel/decision.json")).unwrap())
            .unwrap();
    assert!(decision.get("final_decision").is_some());
    assert!(decision["forward"]["decision"]["auc_sens"]["lower"].is_number());

    let status = bin()
        .args([
            "inspect",
            ws.root.join("sel").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn coverage_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_tiny_config(tmp.path());
    let status = bin()
        .args([
            "coverage",
            "--out",
            tmp.path().join("cov").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--n",
            "60",
            "--reps",
            "1",
            "--epochs",
            "2",
            "--seed",
            "13",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("cov/coverage.json")).unwrap(),
    )
    .unwrap();
    // Per-replication draws and membership indicators are part of the
    // report schema.
    let records = report["coverage"]["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0]["lambda"].is_number());
    assert!(records[0]["sens_covered"].is_boolean());
    assert!(report["selection"]["records"].is_array());
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "fit",
            "--dataset",
            tmp.path().join("nope").to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn bad_alpha_is_a_config_error() {
    let ws = simulate_fixture(60, 17);
    let status = bin()
        .args([
            "uq",
            "--fit",
            ws.root.join("missing_fit").to_str().unwrap(),
            "--dataset",
            ws.root.join("data").to_str().unwrap(),
            "--out",
            ws.root.join("uq").to_str().unwrap(),
            "--alpha",
            "1.5",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn select_rejects_mismatched_datasets() {
    let ws = simulate_fixture(60, 19);
    let other = simulate_fixture(60, 23);
    let config = ws.config.to_str().unwrap().to_string();
    for (root, data, out, structure) in [
        (&ws.root, &ws.root, "fit_t", "tucker"),
        (&other.root, &other.root, "fit_c", "cp"),
    ] {
        let status = bin()
            .args([
                "fit",
                "--dataset",
                data.join("data").to_str().unwrap(),
                "--out",
                root.join(out).to_str().unwrap(),
                "--config",
                &config,
                "--structure",
                structure,
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let status = bin()
        .args([
            "select",
            "--fit-a",
            ws.root.join("fit_t").to_str().unwrap(),
            "--fit-b",
            other.root.join("fit_c").to_str().unwrap(),
            "--dataset",
            ws.root.join("data").to_str().unwrap(),
            "--out",
            ws.root.join("sel").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
