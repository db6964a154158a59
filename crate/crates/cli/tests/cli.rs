use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tfbhtmm::trees::parse_corpus;

fn tool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfbhtmm"))
        .args(args)
        .env_remove("TFBHTMM_JOBS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let read_all = || -> Vec<Vec<u8>> {
        ["train.trees", "test.trees", "generate.meta.json"]
            .iter()
            .map(|f| fs::read(a.join(f)).unwrap())
            .collect()
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = tool(&["generate", "--out-dir", p(&a), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(read_all());
    }
    assert_eq!(runs[0], runs[1]);
    let train = parse_corpus(&fs::read_to_string(a.join("train.trees")).unwrap()).unwrap();
    let test = parse_corpus(&fs::read_to_string(a.join("test.trees")).unwrap()).unwrap();
    assert_eq!((train.len(), test.len()), (600, 180));
    assert_eq!((train.arity, train.alphabet), (3, 4));
    let meta = fs::read_to_string(a.join("generate.meta.json")).unwrap();
    assert!(meta.contains("\"count_per_type\": 260"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(tool(&["generate", "--out-dir", p(&out), "--count-per-type", "0"]).status.code(), Some(2));
    assert_eq!(tool(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tool(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("missing.trees");
    let o = tool(&["train", "--corpus", p(&missing), "--out-dir", p(&out), "--task", "label"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.trees"));

    let bad = dir.path().join("bad.trees");
    fs::write(&bad, "L=2 M=2\n(0 (5))\n").unwrap();
    let o = tool(&["train", "--corpus", p(&bad), "--out-dir", p(&out), "--task", "label"]);
    assert_eq!(o.status.code(), Some(4));

    let ok = dir.path().join("ok.trees");
    fs::write(&ok, "L=2 M=2\n(0 (1))\n").unwrap();
    let o = tool(&["train", "--corpus", p(&ok), "--out-dir", p(&out), "--task", "label", "--l-min", "3"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn train_eval_label_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    let report = dir.path().join("report");
    tool(&["generate", "--out-dir", p(&data), "--count-per-type", "20", "--seed", "3"]);
    let o = tool(&[
        "train", "--corpus", p(&data.join("train.trees")), "--out-dir", p(&models),
        "--task", "label", "--iterations", "30",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(models.join("model.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(log.starts_with("iteration\ttemperature\tlog_likelihood"));

    let o = tool(&[
        "eval", "--test", p(&data.join("test.trees")), "--task", "label",
        "--models", p(&models), "--out-dir", p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(report.join("report.txt")).unwrap();
    assert!(!table.contains("std"), "single run has no std column:\n{table}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert!(json["accuracy"].get("std").is_none());
    let csv = fs::read_to_string(report.join("confusion-run0.csv")).unwrap();
    assert!(csv.starts_with("truth,pred_0,pred_1,pred_2,pred_3"));

    let o = tool(&["label", "--models", p(&models), "--input", p(&data.join("test.trees"))]);
    assert!(o.status.success());
    let predicted = parse_corpus(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(predicted.len(), 15);

    // A label model directory is rejected for classification.
    let o = tool(&["classify", "--models", p(&models), "--input", p(&data.join("test.trees"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn multi_run_eval_reports_spread() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let report = dir.path().join("report");
    tool(&["generate", "--out-dir", p(&data), "--count-per-type", "15", "--seed", "1"]);
    let o = tool(&[
        "eval", "--test", p(&data.join("test.trees")), "--train", p(&data.join("train.trees")),
        "--task", "classify", "--runs", "3", "--states", "3", "--iterations", "10",
        "--model", "sp", "--jobs", "2", "--out-dir", p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["runs"], 3);
    assert!(json["accuracy"]["std"].is_number());
    assert_eq!(json["reports"].as_array().unwrap().len(), 3);
    let meta = fs::read_to_string(report.join("eval.meta.json")).unwrap();
    assert!(meta.contains("\"seeds\": [\n    0,\n    1,\n    2\n  ]"), "{meta}");
}

#[test]
fn perfect_toy_classification() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("toy.trees");
    let mut text = String::from("L=1 M=2 CLASSES=2\n");
    for _ in 0..10 {
        text.push_str("(0 (0 (0))) | 0\n(1 (1)) | 1\n");
    }
    fs::write(&corpus, &text).unwrap();
    let models = dir.path().join("m");
    let o = tool(&[
        "train", "--corpus", p(&corpus), "--out-dir", p(&models), "--task", "classify",
        "--states", "2", "--iterations", "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(models.join("class-0.json").exists() && models.join("class-1.json").exists());
    let o = tool(&[
        "eval", "--test", p(&corpus), "--task", "classify", "--models", p(&models),
        "--out-dir", p(&dir.path().join("r")),
    ]);
    assert!(o.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(json["accuracy"]["mean"], 100.0);

    let o = tool(&["classify", "--models", p(&models), "--input", p(&corpus)]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("tree\tpredicted\tp_0\tp_1\n0\t0\t"));
}

#[test]
fn model_corpus_mismatch_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("t.trees");
    fs::write(&train, "L=1 M=2\n(0 (1))\n").unwrap();
    let other = dir.path().join("o.trees");
    fs::write(&other, "L=2 M=2\n(0 (1))\n").unwrap();
    let models = dir.path().join("m");
    tool(&["train", "--corpus", p(&train), "--out-dir", p(&models), "--task", "label", "--iterations", "2"]);
    let o = tool(&[
        "eval", "--test", p(&other), "--task", "label", "--models", p(&models),
        "--out-dir", p(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("L=2"));
}
