use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_impulse-game"));
    cmd.env("IMPULSE_GAME_THREADS", "2");
    cmd
}

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn solve_to(dir: &Path, name: &str, method: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("{name}.params.json"));
    let mut args = vec!["solve".to_string(), path_str(&spec(name)).to_owned(), "--method".into(), method.into()];
    args.extend(["--out".into(), path_str(&out).to_owned()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn closed_solve_writes_eight_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let p = solve_to(dir.path(), "problem1", "closed", &[]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 8);
    for key in ["a11", "a12", "a21", "a22", "xbar1", "xbar2", "xstar1", "xstar2"] {
        assert!(obj[key].is_f64(), "{key}");
    }
    assert!(obj["xbar1"].as_f64().unwrap() < -2.8);
}

#[test]
fn closed_method_rejects_cubic() {
    let out = run(&["solve", path_str(&spec("cubic")), "--method", "closed"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert!(e["message"].as_str().unwrap().contains("not symmetric-linear"));
}

#[test]
fn numeric_cubic_solve() {
    let out = run(&["solve", path_str(&spec("cubic")), "--method", "numeric"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["a22"].as_f64().unwrap() + 56.001).abs() < 1e-2);
    assert!((v["xstar1"].as_f64().unwrap() - 0.186).abs() < 1e-2);
}

#[test]
fn solve_output_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    for (name, method) in [("problem1", "closed"), ("problem2", "closed"), ("cubic", "numeric"), ("linear_cubic", "numeric")] {
        let params = solve_to(dir.path(), name, method, &[]);
        let report = dir.path().join(format!("{name}.report.json"));
        let out = run(&[
            "verify",
            path_str(&spec(name)),
            path_str(&params),
            "--out",
            path_str(&report),
        ]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        assert_eq!(v["passed"], Value::Bool(true));
        assert!(v["checks"]["sign_condition"].as_bool().unwrap());
    }
}

#[test]
fn perturbed_params_fail_certification_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let params = solve_to(dir.path(), "problem1", "closed", &[]);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&params).unwrap()).unwrap();
    let xbar2 = v["xbar2"].as_f64().unwrap();
    v["xbar2"] = Value::from(xbar2 + 0.2);
    std::fs::write(&params, v.to_string()).unwrap();
    let report = dir.path().join("report.json");
    let out = run(&["verify", path_str(&spec("problem1")), path_str(&params), "--out", path_str(&report)]);
    assert_eq!(out.status.code(), Some(3));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["passed"], Value::Bool(false));
    assert_eq!(r["checks"]["pasting"], Value::Bool(false));
}

#[test]
fn missing_params_file_is_a_validation_error() {
    let out = run(&["simulate", path_str(&spec("problem1")), "/nonexistent/params.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "validation");
}

#[test]
fn unknown_spec_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(spec("problem1")).unwrap().replace("\"rho\"", "\"mu\": 1.0, \"rho\"");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["solve", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_path_reports_insufficient_error() {
    let dir = tempfile::tempdir().unwrap();
    let params = solve_to(dir.path(), "problem1", "closed", &[]);
    let out = run(&[
        "simulate",
        path_str(&spec("problem1")),
        path_str(&params),
        "--paths",
        "1",
        "--horizon",
        "20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(est["j1_se"].is_null() && est["j2_se"].is_null());
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient"));
}

#[test]
fn simulate_writes_estimate_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let params = solve_to(dir.path(), "problem1", "closed", &[]);
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "simulate",
        path_str(&spec("problem1")),
        path_str(&params),
        "--x0",
        "-1.0",
        "--paths",
        "200",
        "--horizon",
        "200",
        "--dt",
        "0.05",
        "--trace",
        path_str(&trace),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(est["n_paths"], 200);
    assert!(est["j1_se"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(trace).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x,player,impulse,discounted_cost");
}

#[test]
fn sweep_csv_for_problem1() {
    let out = run(&[
        "sweep",
        path_str(&spec("problem1")),
        "--param",
        "c",
        "--from",
        "1e-9",
        "--to",
        "1000",
        "--points",
        "40",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "c,xbar1,xbar2,xstar1,xstar2");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]), "xbar2 not increasing");
    // the points shrink like c^(1/3) toward s̃ = 0
    assert!(rows[0][1..].iter().all(|v| v.abs() < 1e-3), "{:?}", rows[0]);
    assert!(rows[0][2] < rows[1][2]);
}

#[test]
fn sweep_towards_the_gain_closes_the_gap() {
    let out = run(&[
        "sweep",
        path_str(&spec("problem2")),
        "--from",
        "50.000001",
        "--to",
        "60",
        "--points",
        "5",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // xstar1 − xbar2
    assert!((first[3] - first[2]).abs() < 1e-3);
}

#[test]
fn sweep_below_the_gain_is_rejected() {
    let out = run(&["sweep", path_str(&spec("problem2")), "--from", "10", "--to", "60"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_with_values_adds_columns() {
    let out = run(&[
        "sweep",
        path_str(&spec("problem1")),
        "--from",
        "100",
        "--to",
        "200",
        "--points",
        "2",
        "--values=-1,0",
        "--coefficients",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "c,xbar1,xbar2,xstar1,xstar2,a11,a12,a21,a22,v1@-1,v2@-1,v1@0,v2@0"
    );
}

#[test]
fn linear_cubic_with_gain_of_fifty_needs_the_override() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(spec("linear_cubic")).unwrap().replace("\"c_tilde\": 5.0", "\"c_tilde\": 50.0");
    let path = dir.path().join("lc50.json");
    std::fs::write(&path, text).unwrap();
    let out = run(&["solve", path_str(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("c >= c_tilde"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = bin()
        .env("IMPULSE_GAME_THREADS", "zero")
        .args(["solve", path_str(&spec("problem1"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    let out = run(&["solve"]);
    assert_eq!(out.status.code(), Some(1));
}
