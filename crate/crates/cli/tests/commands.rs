//! End-to-end runs of the `tiny-align` binary.

use std::path::Path;
use std::process::{Command, Output};

use tinyalign::datakit::{read_features, DatasetManifest};
use tinyalign_cli::{EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn tiny_align(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiny-align"))
        .args(args)
        .env("TINY_ALIGN_THREADS", "1")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = tiny_align(&["train", "--no-such-flag"]);
    assert_eq!(code(&o), EXIT_USAGE);
    assert!(!o.stderr.is_empty());
}

#[test]
fn help_exits_cleanly() {
    let o = tiny_align(&["--help"]);
    assert_eq!(code(&o), EXIT_OK);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["synth", "train", "baseline", "eval", "infer", "scale", "report"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = tiny_align(&["train", "--config", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), EXIT_DATA);
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn invalid_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny_align(&["train", "--pairs", "4", "--epsilon", "-1", "--out", s(dir.path())]);
    assert_eq!(code(&o), EXIT_USAGE, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_transformer_regime_has_fixed_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny_align(&["synth", "--regime", "transformer", "--pairs", "3", "--out", s(dir.path())]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let data = dir.path().join("run").join("data");
    let manifest = DatasetManifest::load(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 3);
    for i in 0..3 {
        let f = manifest.load_features(i).unwrap();
        assert_eq!(f.data().shape(), &[1, 1500, 512]);
    }
    assert!(dir.path().join("run/synth/dataset.json").exists());
}

#[test]
fn train_then_eval_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tiny_align(&["train", "--pairs", "4", "--max-epochs", "2", "--out", out]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["checkpoint.tabf", "loss.csv", "metrics.json", "config.json", "report.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3, "header plus one row per epoch");

    let o = tiny_align(&["eval", "--pairs", "4", "--out", out]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let eval = std::fs::read_to_string(run.join("eval/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 5);

    let features = run.join("data").join(
        DatasetManifest::load(run.join("data/manifest.jsonl")).unwrap().entries()[0]
            .features
            .clone(),
    );
    assert!(read_features(&features).is_ok());
    let o = tiny_align(&["infer", "--pairs", "4", "--features", s(&features), "--out", out]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("infer/infer.json")).unwrap()).unwrap();
    assert!(v["ids"].is_array());
}

#[test]
fn oracle_eval_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tiny_align(&["eval", "--oracle", "--pairs", "3", "--temperature", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/eval/metrics.json")).unwrap()).unwrap();
    let text = m.to_string();
    assert!(text.contains("\"f1\":1.0"), "{text}");
}

#[test]
fn corrupt_feature_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tiny_align(&["train", "--pairs", "2", "--max-epochs", "1", "--out", out]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let bad = dir.path().join("bad.taf");
    std::fs::write(&bad, b"not a feature file").unwrap();
    let o = tiny_align(&["infer", "--pairs", "2", "--features", s(&bad), "--out", out]);
    assert_eq!(code(&o), EXIT_DATA, "{}", String::from_utf8_lossy(&o.stderr));
}
