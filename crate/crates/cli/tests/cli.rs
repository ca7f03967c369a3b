use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn mmixer(args: &[&str]) -> Output {
    mmixer_env(args, None)
}

fn mmixer_env(args: &[&str], precision: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmixer"));
    cmd.args(args).env_remove("MMIXER_PRECISION");
    if let Some(p) = precision {
        cmd.env("MMIXER_PRECISION", p);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> String {
    assert_eq!(
        code(&out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_data(dir: &Path, m: &str) {
    ok(mmixer(&[
        "gen-data", "--m", m, "--t", "3", "--df", "4", "--train-per-class", "4", "--test-per-class", "2",
        "--seed", "7", "--out", p(dir),
    ]));
}

#[test]
fn gen_data_is_deterministic_and_hashed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    tiny_data(&a, "2");
    tiny_data(&b, "2");
    for f in ["train.mmix", "test.mmix", "train.json", "test.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let run = json(&a.join("run.json"));
    let mut h = Sha256::new();
    h.update(std::fs::read(a.join("train.mmix")).unwrap());
    h.update(std::fs::read(a.join("test.mmix")).unwrap());
    assert_eq!(run["dataset"]["sha256"], hex::encode(h.finalize()));
    assert_eq!(run["command"], "gen-data");
    assert_eq!(run["config"]["m"], 2);
    assert_eq!(run["seed"], 7);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    assert_eq!(code(&mmixer(&["gen-data", "--m", "1", "--out", out])), 2);
    assert_eq!(code(&mmixer(&["gen-data", "--bogus", "--out", out])), 2);
    assert_eq!(code(&mmixer(&["train", "--data", out, "--out", out, "--cell", "rnn"])), 2);
    assert_eq!(code(&mmixer(&["train", "--data", out, "--out", out, "--batch", "0"])), 2);
    assert_eq!(code(&mmixer(&["gradcheck", "--tol", "-1"])), 2);
    assert_eq!(code(&mmixer(&["ablate", "--grid", "nope", "--data", out, "--out", out])), 2);
    tiny_data(tmp.path(), "2");
    let train = ["train", "--data", out, "--out", out, "--epochs", "1"];
    assert_eq!(code(&mmixer_env(&train, Some("f16"))), 2);
}

#[test]
fn missing_files_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    assert_eq!(code(&mmixer(&["train", "--data", out, "--out", out])), 1);
    tiny_data(tmp.path(), "2");
    let missing = tmp.path().join("none.mmxr");
    assert_eq!(code(&mmixer(&["eval", "--data", out, "--checkpoint", p(&missing)])), 1);
    let cfg = tmp.path().join("none.json");
    assert_eq!(code(&mmixer(&["train", "--data", out, "--out", out, "--config", p(&cfg)])), 1);
}

#[test]
fn train_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    tiny_data(&data, "2");
    ok(mmixer(&[
        "train", "--data", p(&data), "--out", p(&run), "--epochs", "3", "--dh", "6", "--lr", "0.01",
        "--batch", "4", "--aux", "--aux-epochs", "2", "--cell", "mcu", "--aso", "max",
    ]));
    let metrics = json(&run.join("metrics.json"));
    assert_eq!(metrics["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["aso_kind"], "max");
    assert_eq!(metrics["aux"]["test_acc"].as_array().unwrap().len(), 2);
    for f in ["model.mmxr", "metrics.csv", "metrics.per_class.csv", "run.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest = json(&run.join("run.json"));
    assert_eq!(manifest["config"]["d_h"], 6);
    assert_eq!(manifest["precision"], "f32");

    let eval_dir = tmp.path().join("eval");
    let stdout = ok(mmixer(&[
        "eval", "--data", p(&data), "--checkpoint", p(&run.join("model.mmxr")), "--out", p(&eval_dir),
    ]));
    assert!(stdout.contains("accuracy"));
    let report = json(&eval_dir.join("eval.json"));
    assert_eq!(report["samples"], 8);
    let preds = std::fs::read_to_string(eval_dir.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 9);

    let rep = tmp.path().join("report");
    ok(mmixer(&["report", "--metrics", p(&run), "--out", p(&rep)]));
    let curves = std::fs::read_to_string(rep.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4);
    assert!(curves.lines().nth(1).unwrap().starts_with("run,mcu,max,0,"));
    assert!(rep.join("summary.csv").exists());
}

#[test]
fn untrained_eval_is_at_chance() {
    let tmp = tempfile::tempdir().unwrap();
    tiny_data(tmp.path(), "4");
    let out = tmp.path().join("eval");
    ok(mmixer(&["eval", "--data", p(tmp.path()), "--dh", "4", "--out", p(&out)]));
    let report = json(&out.join("eval.json"));
    assert_eq!(report["chance"], 1.0 / 16.0);
    assert!((report["accuracy"].as_f64().unwrap() - 1.0 / 16.0).abs() < 1e-12);
    assert!((report["loss"].as_f64().unwrap() - 16f64.ln()).abs() < 1e-5);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_data(&data, "2");
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, r#"{"epochs": 3, "lr": 0.005, "d_h": 5, "cell_kind": "gru"}"#).unwrap();
    let run = tmp.path().join("run");
    ok(mmixer_env(
        &["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg), "--epochs", "1"],
        Some("f64"),
    ));
    let manifest = json(&run.join("run.json"));
    assert_eq!(manifest["config"]["epochs"], 1);
    assert_eq!(manifest["config"]["lr"], 0.005);
    assert_eq!(manifest["config"]["cell_kind"], "gru");
    assert_eq!(manifest["config"]["batch_size"], 8);
    assert_eq!(manifest["precision"], "f64");
    assert_eq!(json(&run.join("metrics.json"))["precision"], "f64");
}

#[test]
fn gradcheck_exit_codes() {
    let stdout = ok(mmixer(&["gradcheck", "--cell", "mcu", "--aso", "gru", "--tol", "1e-4"]));
    assert!(stdout.contains("within"));
    let tight = mmixer(&["gradcheck", "--cell", "lstm", "--aso", "mean", "--tol", "1e-300"]);
    assert_eq!(code(&tight), 1);
}

#[test]
fn ablate_aso_grid_has_three_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("ablate");
    tiny_data(&data, "2");
    ok(mmixer(&[
        "ablate", "--grid", "aso", "--data", p(&data), "--out", p(&out), "--epochs", "1", "--dh", "4",
        "--seeds", "0,1",
    ]));
    let rows = json(&out.join("ablate_aso.json"));
    let asos: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["aso_kind"].as_str().unwrap()).collect();
    assert_eq!(asos, ["gru", "max", "mean"]);
    assert_eq!(rows[0]["seeds"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out.join("ablate_aso.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(json(&out.join("run.json"))["config"]["grid"], "aso");
}
