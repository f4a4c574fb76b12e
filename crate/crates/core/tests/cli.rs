//! End-to-end tests of the `bestow` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(rel)
}

fn bestow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bestow")).args(args).output().expect("bestow runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn check_rejects_a_passive_leak() {
    let leak = corpus("typecheck/leak.bst");
    let out = bestow(&["check", leak.to_str().unwrap(), "--variant", "core"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("PassiveLeak at `y`"), "{}", stderr(&out));

    let out = bestow(&["check", leak.to_str().unwrap(), "--json", "--no-timestamps"]);
    assert_eq!(code(&out), 2);
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["ok"], false);
    assert_eq!(v["error"]["kind"], "PassiveLeak");
    assert_eq!(v["error"]["location"], "y");
}

#[test]
fn check_accepts_and_prints_the_type() {
    let out = bestow(&["check", corpus("typecheck/transfer_send.bst").to_str().unwrap(), "--json", "--no-timestamps"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!((v["ok"].clone(), v["type"].clone(), v["variant"].clone()), (true.into(), "Unit".into(), "transfer".into()));
}

#[test]
fn parse_errors_and_missing_files_are_usage_errors() {
    let out = bestow(&["check", corpus("typecheck/private_parse_error.bst").to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), 2);
    assert_eq!(json(&out)["error"]["stage"], "parse");
    assert_eq!(code(&bestow(&["check", "/nonexistent/file.bst"])), 2);
    assert_eq!(code(&bestow(&["explore"])), 2);
    assert_eq!(code(&bestow(&["run", "x.bst", "--schedule", "sideways"])), 2);
}

#[test]
fn explore_reports_a_clean_program() {
    let file = corpus("explore/transfer/transfer_pingpong.bst");
    let out = bestow(&["explore", file.to_str().unwrap(), "--variant", "transfer", "--depth", "40", "--json", "--no-timestamps"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert!(v["statesVisited"].as_u64().unwrap() > 1);
    assert_eq!(v["truncated"], false);
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);

    let canon = bestow(&["explore", file.to_str().unwrap(), "--canonicalize", "--json", "--no-timestamps"]);
    assert_eq!(code(&canon), 0);
    assert!(json(&canon)["statesVisited"].as_u64() <= v["statesVisited"].as_u64());
}

#[test]
fn explore_writes_replayable_traces_for_violations() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let file = corpus("mutants/leak_core.bst");
    let out = bestow(&[
        "explore",
        file.to_str().unwrap(),
        "--mutation",
        "drop-passive-leak-premise",
        "--trace-dir",
        traces.to_str().unwrap(),
        "--json",
        "--no-timestamps",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let v = json(&out);
    let artifacts: Vec<&str> = v["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert_eq!(artifacts.len(), v["violations"].as_array().unwrap().len());
    assert!(!artifacts.is_empty());

    let drf = artifacts.iter().find(|a| a.ends_with(".drf.trace")).expect("a data race is found");
    let replay = bestow(&[
        "run",
        file.to_str().unwrap(),
        "--mutation",
        "drop-passive-leak-premise",
        "--schedule",
        &format!("script:{drf}"),
        "--json",
        "--no-timestamps",
    ]);
    let r = json(&replay);
    let expected = &v["violations"].as_array().unwrap().iter().find(|x| x["property"] == "drf").unwrap()["trace"];
    assert_eq!(&r["trace"], expected);

    // the unmutated type system rejects the program outright
    assert_eq!(code(&bestow(&["explore", file.to_str().unwrap()])), 2);
}

#[test]
fn run_prints_trace_and_final_config() {
    let file = corpus("explore/transfer/transfer_pingpong.bst");
    let out = bestow(&["run", file.to_str().unwrap(), "--wf-every-step"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "run a0");
    let summary = lines.iter().position(|l| l.starts_with("-- quiescent after")).unwrap();
    assert_eq!(lines[summary], format!("-- quiescent after {summary} steps"));
    assert!(lines[summary + 1].starts_with("a0: "));
}

#[test]
fn random_runs_are_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let file = corpus("explore/transfer/transfer_pingpong.bst");
    let f = file.to_str().unwrap();
    let a = bestow(&["run", f, "--schedule", "random", "--seed", "9", "--json", "--no-timestamps"]);
    let b = bestow(&["run", f, "--schedule", "random:9", "--json", "--no-timestamps"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let v = json(&a);
    let script: String = v["trace"].as_array().unwrap().iter().map(|l| format!("{}\n", l.as_str().unwrap())).collect();
    let path = dir.path().join("run.trace");
    std::fs::write(&path, script).unwrap();
    let c = bestow(&["run", f, "--schedule", &format!("script:{}", path.display()), "--json", "--no-timestamps"]);
    let w = json(&c);
    assert_eq!((w["trace"].clone(), w["finalConfig"].clone()), (v["trace"].clone(), v["finalConfig"].clone()));

    std::fs::write(&path, "pop a7\n").unwrap();
    let bad = bestow(&["run", f, "--schedule", &format!("script:{}", path.display())]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("`pop a7` is not enabled"));
}

#[test]
fn deterministic_demos_are_byte_identical() {
    for scenario in ["dht", "graph"] {
        let args = ["--deterministic", "--seed", "3", "demo", scenario, "--json", "--no-timestamps"];
        let (a, b) = (bestow(&args), bestow(&args));
        assert_eq!(code(&a), 0, "{scenario}: {}", stderr(&a));
        assert_eq!(a.stdout, b.stdout, "{scenario}");
        assert_eq!(json(&a)["ok"], true);
    }
}

#[test]
fn bank_demo_passes_its_checks() {
    let out = bestow(&["demo", "bank", "--json", "--no-timestamps"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["ok"] == true));
    assert_eq!(v["details"]["atomic"]["violations"], 0);
}

#[test]
fn bench_ping_reports_throughput() {
    let out = bestow(&["bench", "ping", "--messages", "2000", "--mode", "direct", "--runs", "2", "--json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out);
    let r = &v["reports"][0];
    assert_eq!(r["mode"], "direct");
    assert_eq!(r["runs"].as_array().unwrap().len(), 2);
    assert_eq!(r["runs"][0]["envelopes"], 4000);
    assert!(r["medianMsgsPerSec"].as_f64().unwrap() > 0.0);
    assert!(v["timestamp"].is_u64());

    let all = bestow(&["bench", "ping", "--messages", "2000", "--runs", "1", "--batch", "500", "--json"]);
    let v = json(&all);
    assert_eq!(v["reports"].as_array().unwrap().len(), 3);
    assert_eq!(v["reports"][2]["runs"][0]["envelopes"], 2000 / 500 + 1);
    assert!(v["ratios"]["bestowedOverDirect"].is_f64());
}
