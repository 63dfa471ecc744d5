use std::path::PathBuf;
use std::process::{Command, Output};

fn example() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_brokers.toml")
}

fn fedsim(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedsim"));
    cmd.args(args).env_remove("FEDSIM_EVENT_BUDGET");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn validate_accepts_example() {
    let out = fedsim(&["validate", "--scenario", example().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("ok: 3 brokers"));
}

#[test]
fn validate_echo_reparses() {
    let out = fedsim(&["validate", "--scenario", example().to_str().unwrap(), "--echo"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echo.toml");
    std::fs::write(&path, stdout(&out)).unwrap();
    let again = fedsim(&["validate", "--scenario", path.to_str().unwrap(), "--echo"], &[]);
    assert_eq!(stdout(&again), stdout(&out));
}

#[test]
fn invalid_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "resource_types = [\"cpu\"]\n[[brokers]]\nid = 0\nvisibility = [7]\n").unwrap();
    let out = fedsim(&["run", "--scenario", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("P7"));
}

#[test]
fn small_budget_exits_three() {
    let out = fedsim(&["run", "--scenario", example().to_str().unwrap()], &[("FEDSIM_EVENT_BUDGET", "5")]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("open conversations"));
}

#[test]
fn malformed_budget_exits_two() {
    let out = fedsim(&["run", "--scenario", example().to_str().unwrap()], &[("FEDSIM_EVENT_BUDGET", "lots")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toml_report_and_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.toml");
    let trace = dir.path().join("trace.tsv");
    let out = fedsim(
        &[
            "run",
            "--scenario",
            example().to_str().unwrap(),
            "--seed",
            "4",
            "--format",
            "toml",
            "--report-out",
            report.to_str().unwrap(),
            "--trace-out",
            trace.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed = fedsim::parse_report(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.requests, 4);
    let records = fedsim::engine::parse_trace(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(!records.is_empty());
}

#[test]
fn sweep_reports_every_seed() {
    let out = fedsim(&["sweep", "--scenario", example().to_str().unwrap(), "--seeds", "4"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.matches("same").count(), 4);
    assert!(text.contains("mean satisfaction"));
}
