//! End-to-end checks of the binary: pipeline smoke test, exit codes,
//! and output formats.

use std::path::Path;
use std::process::{Command, Output};

fn relkern(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relkern"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const SPEC: &str = r#"{
  "families": [
    {"kind": "cycle", "count": 8, "min_size": 6, "max_size": 9},
    {"kind": "complete", "count": 8, "min_size": 5, "max_size": 7}
  ],
  "attribute_dim": 4,
  "class_means": [[2.0, 0.0, 0.0, 0.0], [-2.0, 0.0, 0.0, 0.0]],
  "noise_std": 0.1,
  "seed": 5,
  "name": "smoke"
}"#;

#[test]
fn synth_then_run_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("spec.json"), SPEC);
    let synth = relkern(
        &["synth", "--spec", "spec.json", "--out", "data"],
        dir.path(),
    );
    assert!(synth.status.success(), "{synth:?}");
    assert!(dir.path().join("data/smoke_A.txt").exists());

    write(
        &dir.path().join("cfg.json"),
        r#"{
          "dataset.dir": "data",
          "dataset.name": "smoke",
          "train.epochs": 2,
          "train.runs": 1,
          "encoder.hidden_dim": 8,
          "encoder.depth": 2
        }"#,
    );
    let run = relkern(
        &["run", "--config", "cfg.json", "--out", "report.json"],
        dir.path(),
    );
    assert!(run.status.success(), "{run:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["runs"].as_array().unwrap().len(), 1);
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn kernel_subcommand_writes_square_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("spec.json"), SPEC);
    assert!(relkern(
        &["synth", "--spec", "spec.json", "--out", "data"],
        dir.path()
    )
    .status
    .success());
    let out = relkern(
        &[
            "kernel",
            "--dataset-dir",
            "data",
            "--dataset-name",
            "smoke",
            "--kernel",
            "wl",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.trim().lines().collect();
    assert_eq!(rows.len(), 16);
    for row in &rows {
        assert_eq!(row.split(',').count(), 16);
        for field in row.split(',') {
            field.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn eval_scores_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("pred.txt"), "0\n0\n1\n1\n");
    write(&dir.path().join("truth.txt"), "1\n1\n0\n0\n");
    let out = relkern(
        &["eval", "--pred", "pred.txt", "--truth", "truth.txt"],
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["acc"], 1.0);
    assert_eq!(report["nmi"], 1.0);
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = relkern(&["run", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("--bogus"));
    assert!(err.to_lowercase().contains("usage"));
}

#[test]
fn config_errors_exit_one_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = relkern(
        &["run", "--set", "train.epochs=never", "--set", "dataset.synthetic=x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("train.epochs"));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Valid config, but the dataset directory does not exist.
    let out = relkern(
        &[
            "run",
            "--set",
            "dataset.dir=missing",
            "--set",
            "dataset.name=nope",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = relkern(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["run", "ablate", "kernel", "synth", "eval"] {
        assert!(text.contains(sub), "help missing {sub}");
    }
}

#[test]
fn ablation_writes_cell_reports_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("spec.json"), SPEC);
    let out = relkern(
        &[
            "ablate",
            "--set",
            "dataset.synthetic=spec.json",
            "--set",
            "train.epochs=1",
            "--set",
            "train.runs=1",
            "--set",
            "encoder.hidden_dim=8",
            "--set",
            "encoder.depth=2",
            "--mode",
            "sub-relation",
            "--out-dir",
            "cells",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{out:?}");
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.trim().lines().count(), 5);
    assert!(dir.path().join("cells/sub-relation_summary.csv").exists());
    assert!(dir
        .path()
        .join("cells/sub-relation_relations_all.json")
        .exists());
}
