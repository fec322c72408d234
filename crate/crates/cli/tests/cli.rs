use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vqakit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqakit"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn fixture(records: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = vqakit(dir.path(), &["init-fixture", "--dir", ".", "--records", records, "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn run_all_then_everything_skips() {
    let dir = fixture("50");
    let first = vqakit(dir.path(), &["run-all"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let lines = stdout_lines(&first);
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l["skipped"] == false));
    assert_eq!(lines[8]["stage"], "eval");

    let again = vqakit(dir.path(), &["run-all"]);
    assert!(stdout_lines(&again).iter().all(|l| l["skipped"] == true));
    assert!(dir.path().join("work/manifests/split.manifest.json").is_file());
}

#[test]
fn single_stage_and_missing_input() {
    let dir = fixture("20");
    let out = vqakit(dir.path(), &["generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "precondition");

    let out = vqakit(dir.path(), &["ingest"]);
    assert!(out.status.success());
    assert_eq!(stdout_lines(&out)[0]["count_out"], 20);
}

#[test]
fn usage_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = vqakit(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], "usage");

    let out = vqakit(dir.path(), &["eval", "--gold", "g.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], "usage");

    let out = vqakit(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "io");
}

#[test]
fn standalone_eval_report() {
    let dir = fixture("40");
    assert!(vqakit(dir.path(), &["run-all"]).status.success());
    let out = vqakit(
        dir.path(),
        &[
            "eval", "--task", "choice", "--gold", "work/test_initial.jsonl", "--pred",
            "work/predictions.mock.jsonl", "--bootstrap", "200", "--seed", "7", "--out", "r.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["bootstrap"]["resamples"], 200);
    let acc = &report["acc"];
    assert!(acc["lo"].as_f64() <= acc["point"].as_f64() && acc["point"].as_f64() <= acc["hi"].as_f64());
    assert_eq!(std::fs::read(dir.path().join("r.json")).unwrap(), out.stdout);

    let again = vqakit(
        dir.path(),
        &[
            "eval", "--gold", "work/test_initial.jsonl", "--pred", "work/predictions.mock.jsonl",
            "--bootstrap", "200", "--seed", "7",
        ],
    );
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn strict_mode_rejects_tampered_outputs() {
    let dir = fixture("30");
    assert!(vqakit(dir.path(), &["run-all"]).status.success());
    let train = dir.path().join("work/train.jsonl");
    let text = std::fs::read_to_string(&train).unwrap();
    std::fs::write(&train, text.lines().skip(1).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let out = vqakit(dir.path(), &["--strict", "stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "hash_mismatch");
}

#[test]
fn label_export_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let verdict = |pair: &str, who: &str, ok: bool| {
        serde_json::json!({
            "pair_id": pair, "annotator": who, "timestamp_ms": 1, "accept": ok,
            "criteria": {"question_image_answerable": ok, "distractors_adequate": true, "image_quality_ok": true},
        })
        .to_string()
    };
    let log = [verdict("p1", "a", true), verdict("p1", "b", false), verdict("p2", "a", true)].join("\n");
    std::fs::write(dir.path().join("log.jsonl"), log + "\n").unwrap();
    let out = vqakit(dir.path(), &["label-export", "--log", "log.jsonl"]);
    assert!(out.status.success());
    let labels = stdout_lines(&out);
    assert_eq!(labels.len(), 2);
    assert_eq!(labels[0]["pair_id"], "p1");
    assert_eq!(labels[0]["label"], 0, "a tie exports 0");
    assert_eq!(labels[1]["label"], 1);
}
