use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bcompat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcompat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_log(path: &Path, model: &str, correct: &[bool]) {
    let mut text = format!("{{\"model_id\":\"{model}\",\"label_set\":[0,1]}}\n");
    for (i, c) in correct.iter().enumerate() {
        let pred = if *c { 0 } else { 1 };
        text.push_str(&format!(
            "{{\"id\":\"{}\",\"y\":0,\"pred\":{pred},\"conf\":0.8}}\n",
            i + 1
        ));
    }
    fs::write(path, text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn compare_log_with_itself() {
    let tmp = tempfile::tempdir().unwrap();
    write_log(
        &tmp.path().join("h1.jsonl"),
        "h1",
        &[true, true, false, true],
    );
    let out = bcompat(
        &["compare", "h1.jsonl", "h1.jsonl", "--out-dir", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("BTC=1.0000 BEC=1.0000"),
        "{}",
        stdout(&out)
    );
    for f in [
        "report.json",
        "groups.csv",
        "incompatible.csv",
        "manifest.json",
    ] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn compare_ten_point_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let h1: Vec<bool> = (1..=10).map(|i| i <= 7).collect();
    let h2: Vec<bool> = (1..=10).map(|i| i <= 6 || i == 8).collect();
    write_log(&tmp.path().join("h1.jsonl"), "h1", &h1);
    write_log(&tmp.path().join("h2.jsonl"), "h2", &h2);
    let out = bcompat(
        &[
            "compare",
            "h1.jsonl",
            "h2.jsonl",
            "--out-dir",
            "out",
            "--hist-bins",
            "4",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("BTC=0.8571 BEC=0.6667"),
        "{}",
        stdout(&out)
    );
    let report = read_json(&tmp.path().join("out/report.json"));
    assert_eq!(report["incompatible_ids"], serde_json::json!(["7"]));
    let incompatible = fs::read_to_string(tmp.path().join("out/incompatible.csv")).unwrap();
    assert_eq!(incompatible.lines().count(), 2);
    assert!(tmp.path().join("out/histogram.csv").exists());
}

#[test]
fn malformed_line_is_reported_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_log(&tmp.path().join("h1.jsonl"), "h1", &[true; 8]);
    let mut lines: Vec<String> = fs::read_to_string(tmp.path().join("h1.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[6] = "{\"id\":\"6\",\"y\":0,".to_string();
    fs::write(tmp.path().join("h2.jsonl"), lines.join("\n")).unwrap();
    let out = bcompat(
        &["compare", "h1.jsonl", "h2.jsonl", "--out-dir", "out"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));
    let manifest = read_json(&tmp.path().join("out/manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].as_str().unwrap().contains("line 7"));
}

#[test]
fn unsorted_rates_are_rejected_by_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "experiment": "noise-sweep",
        "output_dir": "out",
        "seed": 1,
        "trials": 2,
        "trainer": {"learning_rate": 0.1, "epochs": 1, "batch_size": 8},
        "big": {"synth": "blobs-binary", "size": 100, "seed": 1},
        "small_size": 20,
        "test": {"synth": "blobs-binary", "size": 50, "seed": 2},
        "noise": {"kind": "label_swap", "label_a": 0, "label_b": 1},
        "rates": [0.0, 0.3, 0.2]
    });
    fs::write(tmp.path().join("cfg.json"), cfg.to_string()).unwrap();
    let out = bcompat(&["run", "cfg.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("rates"), "{}", stderr(&out));
    let manifest = read_json(&tmp.path().join("out/manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["inputs"][0]["sha256"].is_string());
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = bcompat(
            &[
                "synth",
                "glyph-grid",
                "--size",
                "5000",
                "--seed",
                "3",
                "--out",
                name,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read(tmp.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b.jsonl")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["feature_shape"], serde_json::json!([12, 12, 1]));
    let mut counts = [0usize; 10];
    for line in lines {
        let v: Value = serde_json::from_str(line).unwrap();
        counts[v["y"].as_u64().unwrap() as usize] += 1;
    }
    assert_eq!(counts, [500; 10]);
    assert!(tmp.path().join("a.jsonl.manifest.json").exists());
}

#[test]
fn unknown_synth_kind_exits_2_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bcompat(
        &["synth", "spirals", "--size", "10", "--out", "d.jsonl"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let manifest = read_json(&tmp.path().join("d.jsonl.manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["command"], "synth");
}

#[test]
fn train_predict_compare_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = bcompat(args, tmp.path());
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        out
    };
    run(&[
        "synth",
        "blobs-binary",
        "--size",
        "200",
        "--seed",
        "1",
        "--out",
        "train.jsonl",
    ]);
    run(&[
        "synth",
        "blobs-binary",
        "--size",
        "100",
        "--seed",
        "2",
        "--out",
        "test.jsonl",
    ]);
    fs::write(
        tmp.path().join("trainer.json"),
        r#"{"learning_rate": 0.1, "epochs": 5, "batch_size": 16, "seed": 4}"#,
    )
    .unwrap();
    run(&[
        "train",
        "train.jsonl",
        "--config",
        "trainer.json",
        "--out",
        "m.json",
    ]);
    run(&[
        "predict",
        "m.json",
        "test.jsonl",
        "--out",
        "p.jsonl",
        "--model-id",
        "h1",
    ]);
    let out = run(&["compare", "p.jsonl", "p.jsonl", "--out-dir", "cmp"]);
    assert!(stdout(&out).contains("BTC=1.0000"));
}
