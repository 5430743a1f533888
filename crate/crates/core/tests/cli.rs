use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn selev(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selev"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = selev(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    // same command in separate directories: the manifest records the output path
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        ok(
            &["--seed", seed, "synth", "--out", "w", "--samples", "12"],
            dir.path(),
        );
        tree(&dir.path().join("w"))
    };
    let a = run("7");
    assert!(a.len() > 4);
    assert!(a == run("7"));
    assert!(a != run("8"));
}

#[test]
fn calibrate_from_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..100 {
        let loss = i % 25 == 0;
        lines.push_str(
            &json!({"unit": format!("u{i}"), "score": i as f64 / 100.0, "loss": loss}).to_string(),
        );
        lines.push('\n');
    }
    fs::write(dir.path().join("scores.jsonl"), lines).unwrap();
    ok(
        &[
            "--alpha",
            "0.10",
            "--delta",
            "0.05",
            "calibrate",
            "--scores",
            "scores.jsonl",
            "--out",
            "cal.json",
        ],
        dir.path(),
    );
    let doc = read_json(&dir.path().join("cal.json"));
    let r = &doc["result"];
    assert_eq!(r["feasible"], json!(true));
    assert_eq!(r["alpha"], json!(0.10));
    assert_eq!(r["delta"], json!(0.05));
    assert_eq!(r["calibration_size"], json!(100));
    assert!(r["tau"].as_f64().is_some());
    assert!(r["cp_upper"].as_f64().unwrap() <= 0.10);
    assert_eq!(doc["manifest"]["subcommand"], json!("calibrate"));
}

#[test]
fn full_workflow_and_gold_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["--seed", "11", "synth", "--out", "w", "--samples", "30"],
        d,
    );
    let common = [
        "--dataset",
        "w/dataset.jsonl",
        "--weights",
        "w/weights.json",
    ];
    let mut args = vec!["--seed", "11", "calibrate"];
    args.extend(common);
    args.extend(["--truth", "w/truth.json", "--out", "cal.json"]);
    ok(&args, d);

    let mut args = vec!["route"];
    args.extend(common);
    args.extend(["--calibration", "cal.json", "--out", "routed.json"]);
    ok(&args, d);
    let routed = read_json(&d.join("routed.json"));
    let tau = read_json(&d.join("cal.json"))["result"]["tau"].clone();
    assert_eq!(routed["manifest"]["config"]["pipeline"]["tau"], tau);

    ok(
        &[
            "select",
            "--dataset",
            "w/dataset.jsonl",
            "--weights",
            "w/weights.json",
            "--unit",
            "s000000:0",
            "--out",
            "sel.json",
        ],
        d,
    );
    let sel = read_json(&d.join("sel.json"));
    assert!(!sel["chosen_ids"].as_array().unwrap().is_empty());

    // Replace every prediction with the gold entities from the dataset.
    let mut gold_doc = routed.clone();
    let records: Vec<Value> = fs::read_to_string(d.join("w/dataset.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for s in gold_doc["samples"].as_array_mut().unwrap() {
        let rec = records.iter().find(|r| r["id"] == s["id"]).unwrap();
        let ents: Vec<Value> = rec["units"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|u| !u["gold"].is_null())
            .map(|u| json!({"a": u["span"][0], "b": u["span"][1], "type": u["gold"]}))
            .collect();
        s["entities"] = json!({ "entities": ents });
    }
    fs::write(
        d.join("gold.json"),
        serde_json::to_string(&gold_doc).unwrap(),
    )
    .unwrap();
    ok(
        &[
            "eval",
            "--dataset",
            "w/dataset.jsonl",
            "--routed",
            "gold.json",
            "--truth",
            "w/truth.json",
            "--curve",
            "curve.tsv",
            "--out",
            "eval.json",
        ],
        d,
    );
    let m = &read_json(&d.join("eval.json"))["metrics"];
    assert_eq!(m["f1"], json!(1.0));
    assert_eq!(m["precision"], json!(1.0));
    assert_eq!(m["recall"], json!(1.0));
    let curve = fs::read_to_string(d.join("curve.tsv")).unwrap();
    assert!(curve.starts_with("# manifest {"));
    assert_eq!(curve.lines().nth(1), Some("coverage\trisk"));

    ok(
        &[
            "eval",
            "--dataset",
            "w/dataset.jsonl",
            "--routed",
            "routed.json",
            "--out",
            "eval2.json",
        ],
        d,
    );
    let f1 = read_json(&d.join("eval2.json"))["metrics"]["f1"]
        .as_f64()
        .unwrap();
    assert!(f1 < 1.0);
}

#[test]
fn cost_table_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--budget-k", "3", "cost", "--steps", "4"], dir.path());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert!(rows.len() >= 5);
    for r in rows {
        for s in rows {
            let (g1, g2) = (
                r["gamma_bar"].as_f64().unwrap(),
                s["gamma_bar"].as_f64().unwrap(),
            );
            let (k1, k2) = (r["k"].as_u64().unwrap(), s["k"].as_u64().unwrap());
            if g1 <= g2 && k1 <= k2 {
                assert!(r["cost"].as_f64().unwrap() <= s["cost"].as_f64().unwrap());
            }
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        selev(&["--no-such-flag", "cost"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        selev(&["--alpha", "2.0", "cost"], dir.path()).status.code(),
        Some(2)
    );
    let missing = selev(&["calibrate", "--scores", "absent.jsonl"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());
    fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
    assert_eq!(
        selev(&["calibrate", "--scores", "bad.jsonl"], dir.path())
            .status
            .code(),
        Some(2)
    );
}
