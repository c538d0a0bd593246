use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vismpc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vismpc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn vismpc")
}

fn ok(args: &[&str], dir: &Path) {
    let out = vismpc(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["tasks", "--limit", "3", "--steps", "3", "-o", "suite.toml"], d);
    for i in 0..2 {
        ok(
            &[
                "bench",
                "--suite",
                "suite.toml",
                "--methods",
                "random,servo-vector,visual-mpc",
                "-o",
                &format!("r{i}.json"),
                "--tsv",
                &format!("r{i}.tsv"),
            ],
            d,
        );
    }
    assert_eq!(fs::read(d.join("r0.json")).unwrap(), fs::read(d.join("r1.json")).unwrap());
    assert_eq!(fs::read(d.join("r0.tsv")).unwrap(), fs::read(d.join("r1.tsv")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r0.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 3);
}

#[test]
fn collect_train_and_run_with_learned_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["collect", "--episodes", "3", "--steps", "5", "--seed", "1", "-o", "data.bin"], d);
    fs::write(
        d.join("train.toml"),
        "[model]\nchannels = 2\nhidden = 4\npatch_radius = 1\n\n[train]\nepochs = 1\nbatch_size = 4\nhorizon = 2\n",
    )
    .unwrap();
    ok(
        &[
            "train", "--data", "data.bin", "--config", "train.toml", "--validate", "data.bin", "-o", "model.bin", "--report",
            "train.json",
        ],
        d,
    );
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("train.json")).unwrap()).unwrap();
    assert_eq!(report["loss_curve"].as_array().unwrap().len(), 1);
    assert!(report["validation_mse"].as_f64().unwrap().is_finite());

    ok(&["tasks", "--limit", "1", "--steps", "2", "-o", "suite.toml"], d);
    ok(&["run", "--suite", "suite.toml", "--model", "model.bin", "-o", "log.json"], d);
    let log: serde_json::Value = serde_json::from_slice(&fs::read(d.join("log.json")).unwrap()).unwrap();
    assert_eq!(log["actions"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = vismpc(&["bench", "--methods", "teleport", "-o", "r.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teleport"));
    let out = vismpc(&["run", "--task", "99", "-o", "log.json"], d);
    assert!(!out.status.success());
    let out = vismpc(&["serve", "--model", "missing.bin"], d);
    assert!(!out.status.success());
}
