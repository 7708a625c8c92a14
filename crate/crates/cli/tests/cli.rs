use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run_in(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_allocatron"));
    cmd.args(args).env_remove("ALLOCATRON_DATA_DIR");
    if let Some(dir) = data_dir {
        cmd.env("ALLOCATRON_DATA_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_in(args, None)
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

#[test]
fn bounds_depth_efficiency_example() {
    let v = json(&["bounds", "--depth", "2", "--width", "81", "--heads", "1"]);
    assert!((num(&v, "log3_lower") - 3.358).abs() < 5e-4);
    assert!((num(&v, "log3_upper") - 16.045).abs() < 5e-4);
    assert_eq!(v["regime"], "DepthEfficiency");
}

#[test]
fn bounds_on_boundary_is_domain_error() {
    let out = run(&["bounds", "--depth", "4", "--width", "81"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: bounds::RegimeMismatch"), "{err}");
}

#[test]
fn plan_large_budget() {
    let v = json(&["plan", "--params", "175e9", "--fit", "paper"]);
    let depth = v["optimal_depth"].as_u64().unwrap();
    assert!((79..=81).contains(&depth), "depth {depth}");
    let w = num(&v, "width_from_budget");
    assert!((w - 13500.0).abs() / 13500.0 < 0.01, "width {w}");
}

#[test]
fn fit_bundled_transitions() {
    let v = json(&["fit", "--transitions", "bundled"]);
    assert!((num(&v, "a") - 5.039).abs() < 1e-3);
    assert!((num(&v, "b") - 0.0555).abs() < 1e-4);
    assert!((num(&v, "chi2_red") - 0.854).abs() < 2e-3);
    assert_eq!(v["dof"], 3);
    assert!(v["cov"][0][1].as_f64().unwrap() < 0.0);
}

#[test]
fn audit_flags_large_model() {
    let v = json(&["audit", "--depth", "96", "--width", "12288"]);
    assert_eq!(v["verdict"], "TooDeep");
    let v = json(&["audit", "--depth", "12", "--width", "768"]);
    assert_eq!(v["verdict"], "TooShallow");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["bounds", "--depth", "two", "--width", "81"]).status.code(), Some(2));
    assert_eq!(run(&["plan"]).status.code(), Some(2));
    assert_eq!(run(&["nope"]).status.code(), Some(2));
    let out = run(&["bounds", "--depth", "2", "--width", "81", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one() {
    let out = run(&["plan", "--params=-5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("planner::"));
    let out = run(&["plan", "--params", "1e9", "--fit", "/no/such/fit.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["lab", "assignment", "--width", "6"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_file_gets_machine_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let out = run(&["table1", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("GPT-3 175B"));
    let csv = std::fs::read_to_string(&path).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("name,"));
    let depths: Vec<&str> = lines.map(|l| l.split(',').nth(6).unwrap()).collect();
    assert_eq!(depths, ["23", "32", "37", "42", "47", "54", "60", "80", "95"]);
}

#[test]
fn curve_csv() {
    let out = run(&["curve", "--min-depth", "10", "--max-depth", "20", "--step", "5", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "L,N,dN");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("10,"));
}

#[test]
fn output_is_deterministic() {
    let args = ["lab", "grid-rank", "--depth", "2", "--width", "4", "--heads", "2", "--seq-len", "4", "--grid", "full", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let p1 = run(&["plan", "--params", "1e10", "--fit", "bundled"]);
    let p2 = run(&["plan", "--params", "1e10", "--fit", "bundled"]);
    assert_eq!(p1.stdout, p2.stdout);
}

#[test]
fn lab_commands_pass() {
    let v = json(&["lab", "hadamard", "--dim", "3", "--lambda", "3"]);
    assert_eq!(v["measured_rank"], 10);
    assert_eq!(v["pass"], true);
    let v = json(&["lab", "assignment"]);
    assert_eq!(v["measured_rank"], 4);
    assert_eq!(v["pass"], true);
    let ratio = v["proportionality"]["ratio_re"].as_f64().unwrap();
    assert!((ratio - 8192.0).abs() < 1e-6);
    let v = json(&["lab", "grid-rank", "--depth", "3", "--width", "5", "--seq-len", "4"]);
    assert_eq!(v["pass"], true);
}

#[test]
fn data_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("published_transitions.csv"),
        "depth,width,width_err\n1,100,10\n2,110,10\n3,121,10\n",
    )
    .unwrap();
    let out = run_in(&["fit", "--transitions", "bundled"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((num(&v, "b") - 1.1f64.ln()).abs() < 1e-3);
}

#[test]
fn transition_from_losses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("losses.csv");
    let mut csv = String::from("depth,width,test_loss,loss_std\n");
    // shallow beats deep at small width, deep wins from 300 on
    for w in [100, 200, 300, 400, 500] {
        let shallow = 1.0 - 0.0001 * w as f64;
        let deep = if w < 300 { shallow + 0.01 } else { shallow - 0.05 };
        csv.push_str(&format!("2,{w},{shallow},0.002\n3,{w},{deep},0.002\n"));
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(&["transition", "--losses", path.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("depth,width,width_err"));
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[0], 2.0);
    assert!(row[1] > 100.0 && row[1] < 400.0, "{row:?}");
}
