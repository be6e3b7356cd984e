use std::path::Path;
use std::process::{Command, Output};

fn dpmcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmcl")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_record(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is a JSON error record")
}

fn small_run(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![
        "run", "--method", "dpmcl", "--tasks", "3", "--runs", "2", "--kappa", "4", "--batch", "16", "--out", out,
    ];
    args.extend_from_slice(extra);
    dpmcl(&args)
}

#[test]
fn run_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "dpmcl");
    assert_eq!(v["runs"], 2);
    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("method,dataset,run,task,cme,nte"));
    assert_eq!(rows.lines().count(), 7);
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "method = \"Naive\"\nnum_tasks = 2\ntotal_runs = 1\nn = 3\nbatch_size = 8\nhidden_units = 8\n").unwrap();
    let out = dpmcl(&["run", "--config", cfg.to_str().unwrap(), "--method", "ER"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["method"], "er");
    assert_eq!(v["runs"], 1);
}

#[test]
fn saved_state_and_exported_stream() {
    let dir = tempfile::tempdir().unwrap();
    let stream_dir = dir.path().join("stream");
    let out = small_run(dir.path(), &["--save-state", "--export-stream", stream_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("learner_run1.json")).unwrap()).unwrap();
    assert_eq!(ck["version"], 1);
    assert_eq!(ck["networks"].as_array().unwrap().len(), 2);
    assert!(ck["rng"]["word_pos"].is_string());
    let memory = std::fs::read_to_string(dir.path().join("memory_run0.csv")).unwrap();
    assert!(memory.starts_with("task_id,"));
    assert!(std::fs::read_dir(&stream_dir).unwrap().count() > 0);
}

#[test]
fn theory_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = dpmcl(&["theory", "--schedule", "geometric:0.9", "--eps", "0.1", "--L", "1", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["report"]["verdict"], "convergent");
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(written, v);

    let out = dpmcl(&["theory", "--schedule", "growing:1"]);
    assert_eq!(stdout_json(&out)["report"]["verdict"], "divergent");
}

#[test]
fn gradcheck_passes() {
    let out = dpmcl(&["gradcheck", "--instances", "5", "--seed", "3"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(v["report"]["checks"], 20);
}

#[test]
fn failures_emit_an_error_record() {
    let out = dpmcl(&["theory", "--schedule", "geometric:2"]);
    assert!(!out.status.success());
    let v = error_record(&out);
    assert_eq!(v["error"]["kind"], "invalid_argument");
    assert!(v["error"]["message"].as_str().unwrap().contains("geometric"));

    let out = dpmcl(&["run", "--method", "sgd-magic", "--tasks", "1"]);
    assert!(!out.status.success());
    assert_eq!(error_record(&out)["error"]["kind"], "invalid_argument");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kapa = 3\n").unwrap();
    let out = dpmcl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(error_record(&out)["error"]["kind"], "config");

    let out = dpmcl(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(error_record(&out)["error"]["kind"], "io");
}
