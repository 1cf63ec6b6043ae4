//! End-to-end runs of the `artic` binary.

use std::path::Path;
use std::process::{Command, Output};

fn artic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn report_on_a_directory_without_reports_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = artic(&["report", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no report.json"));
}

#[test]
fn missing_scene_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = artic(&["train", "--scene-dir", path(&missing), "--out", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.matches("not found").count(), 1, "{err}");
}

#[test]
fn unknown_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = artic(&["generate", "--spec", "no_such_scene", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_with_a_fixed_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let scene = root.join("scene");
    let out = artic(&["generate", "--spec", "door2", "--seed", "1", "--out", path(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // a short schedule keeps the test quick; determinism does not depend on length
    let cfg = root.join("short.toml");
    std::fs::write(
        &cfg,
        "[train]\niters_warmup = 20\niters_soft = 30\niters_hard = 20\nprismatic_check_step = 15\nn_points = 1500\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let o = root.join(run);
        let out = artic(&["train", "--scene-dir", path(&scene), "--config", path(&cfg), "--seed", "7", "--out", path(&o)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = artic(&["eval", "--scene-dir", path(&scene), "--out", path(&o)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for f in ["checkpoint.json", "train_log.csv", "timing.json", "parts_canonical.ply", "metrics.csv"] {
            assert!(o.join(f).exists(), "{f} missing");
        }
        reports.push(std::fs::read(o.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let report: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(report["joints"].as_array().unwrap().len(), 1);

    let csv = root.join("all.csv");
    let out = artic(&["report", path(root), "--out", path(&csv)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() >= 2, "{text}");
}
