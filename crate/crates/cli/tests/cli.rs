use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qasum::corpus::write_records;
use qasum::synthetic::{generate, SyntheticConfig};
use serde_json::Value;

fn qasum() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qasum"));
    c.env_remove("QASUM_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small synthetic workspace with a run configuration.
fn workspace(dir: &Path) -> PathBuf {
    let recs = generate(&SyntheticConfig {
        docs: 8,
        seed: 42,
        ..Default::default()
    })
    .unwrap();
    write_records(dir.join("train.jsonl"), &recs[..6]).unwrap();
    write_records(dir.join("valid.jsonl"), &recs[6..]).unwrap();
    let cfg = serde_json::json!({
        "train": "train.jsonl",
        "valid": "valid.jsonl",
        "test": "valid.jsonl",
        "checkpoint_dir": "ck",
        "model": {"embed_dim": 4, "hidden": 4, "decision_hidden": 3},
        "training": {"batch": 3, "n_samples": 2, "epochs_max": 2, "pretrain_epochs": 2, "lr": 1e-3, "seed": 5}
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(qasum().args(["train", "--frobnicate"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = run(qasum().arg("frobnicate"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "").unwrap();
    let o = run(qasum().args(["eval", "--checkpoint"]).arg(&missing).arg("--input").arg(&input));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path());
    std::fs::remove_file(dir.path().join("train.jsonl")).unwrap();
    let o = run(qasum().arg("pretrain").arg("--config").arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.jsonl"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"train":"t","valid":"v","checkpoint_dir":"c","extra":true}"#).unwrap();
    let o = run(qasum().arg("train").arg("--config").arg(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
    let o = run(qasum().arg("train").arg("--config").arg(&cfg).env("QASUM_SEED", "x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prep_fills_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    std::fs::write(
        &input,
        r#"{"id":"r1","source":[["Officials","in","Liberia","said","Friday"]],"abstract":[["Officials","said","Liberia","will","receive","vaccines"]]}"#,
    )
    .unwrap();
    let before = std::fs::read(&input).unwrap();
    let output = dir.path().join("annotated.jsonl");
    let o = run(qasum().arg("prep").arg("--input").arg(&input).arg("--output").arg(&output));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&input).unwrap(), before);
    let line: Value = serde_json::from_str(std::fs::read_to_string(&output).unwrap().trim()).unwrap();
    assert_eq!(line["roots"], serde_json::json!([1]));
    assert_eq!(line["entities"][0][0], serde_json::json!([0, 1, "MISC"]));

    let o = run(qasum().arg("prep").arg("--input").arg(&input).arg("--output").arg(&input));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path());

    let o = run(qasum().arg("genq").arg("--config").arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        assert_eq!(l["question"].as_str().unwrap().matches("___").count(), 1);
        assert!(l["answer"].as_str().unwrap().starts_with("ent"));
        assert_eq!(l["k"], 0);
    }

    let o = run(qasum().arg("pretrain").arg("--config").arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("ck/pretrained.json").exists());

    let o = run(qasum().arg("train").arg("--config").arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["epochs_run"], 2);
    let best = dir.path().join("ck/best.json");
    assert!(best.exists());

    let summarize = |out: &Path| {
        let o = run(qasum()
            .arg("summarize")
            .arg("--checkpoint")
            .arg(&best)
            .arg("--input")
            .arg(dir.path().join("valid.jsonl"))
            .arg("--output")
            .arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = summarize(&dir.path().join("s1.jsonl"));
    let b = summarize(&dir.path().join("s2.jsonl"));
    assert_eq!(a, b);
    for line in String::from_utf8(a).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["mask"].as_array().unwrap().len(), 60);
        assert!(v["segments"].is_array() && v["summary_text"].is_string() && v["overlay"].is_string());
    }

    let report_path = dir.path().join("report.json");
    let o = run(qasum()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&best)
        .arg("--input")
        .arg(dir.path().join("valid.jsonl"))
        .arg("--report")
        .arg(&report_path));
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(r["corpus"]["documents"], 2);
    assert_eq!(r["per_document"].as_array().unwrap().len(), 2);
    for key in ["rouge_1", "rouge_2", "rouge_l"] {
        let f1 = r["corpus"]["rouge"][key]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    let acc = r["corpus"]["qa_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // changing the configuration makes the pretrained checkpoint unusable
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"seed\": 5", "\"seed\": 6");
    std::fs::write(&cfg, text).unwrap();
    let o = run(qasum().arg("train").arg("--config").arg(&cfg));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn seed_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path());
    let ck = dir.path().join("ck/pretrained.json");
    let pretrain = |args: &[&str], env: Option<&str>| {
        let mut c = qasum();
        c.arg("pretrain").arg("--config").arg(&cfg).args(args);
        if let Some(v) = env {
            c.env("QASUM_SEED", v);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(&ck).unwrap()
    };
    let flag = pretrain(&["--seed", "9"], Some("1"));
    let env = pretrain(&[], Some("9"));
    let config = pretrain(&[], None);
    assert_eq!(flag, env);
    assert_ne!(env, config);
}
