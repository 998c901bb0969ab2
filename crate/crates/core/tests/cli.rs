//! The `obstacle` command line, driven in process.

use std::io::Write;

use obstacle_control::cli::run_with;
use tempfile::NamedTempFile;

fn config(json: &str) -> NamedTempFile {
    let mut f = NamedTempFile::new().unwrap();
    f.write_all(json.as_bytes()).unwrap();
    f
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("obstacle").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn solve_without_contact_is_a_poisson_solve() {
    let cfg = config(r#"{"grid": {"kind": "interval", "n": 31}, "psi": -10, "control": 2}"#);
    let (code, out, err) = run(&["solve", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["x", "u", "psi", "y", "lambda", "slack", "class"]);
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        let (x, y): (f64, f64) = (r[0].parse().unwrap(), r[3].parse().unwrap());
        assert!((y - x * (1.0 - x)).abs() < 1e-12);
        assert_eq!(&r[6], "inactive");
        n += 1;
    }
    assert_eq!(n, 31);
    let report: serde_json::Value = serde_json::from_str(&err).unwrap();
    assert_eq!(report["inactive"], 31);
}

#[test]
fn subharmonic_obstacle_is_certified() {
    let cfg = config(r#"{"grid": {"kind": "interval", "n": 63}, "psi": "x^2 - x", "objective": {"g": -1}}"#);
    let (code, out, err) = run(&["ssc", "--config", cfg.path().to_str().unwrap(), "--theorem", "subharmonic"]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["verdict"], "certified");
}

#[test]
fn stationarity_of_a_resting_state() {
    let cfg = config(r#"{"grid": {"kind": "square", "n": 7}, "psi": -1}"#);
    let (code, out, _) = run(&["stationarity", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["strongly_stationary"], true);
}

#[test]
fn optimize_writes_the_report_to_a_file() {
    let cfg = config(r#"{"grid": {"kind": "interval", "n": 31}, "psi": 0, "objective": {"g": -1}}"#);
    let report = NamedTempFile::new().unwrap();
    let (code, out, err) = run(&[
        "optimize",
        "--config",
        cfg.path().to_str().unwrap(),
        "--starts",
        "3",
        "--json",
        report.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("start,iterations"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.path()).unwrap()).unwrap();
    assert_eq!(report["diagnostics"]["iterations"].as_array().unwrap().len(), 3);
}

#[test]
fn sweep_emits_one_row_per_value() {
    let cfg = config(
        r#"{"grid": {"kind": "interval", "n": 31}, "psi": "0.5*sin(pi*x) - c", "params": {"c": 0.4},
            "sweep": {"name": "c", "values": [0.2, 0.3, 0.4]}}"#,
    );
    let (code, out, err) = run(&["sweep", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 4);
    assert!(out.starts_with("c,objective,active"));
}

#[test]
fn counterexample_two_is_confirmed_and_its_edge_is_not() {
    let (code, out, _) = run(&["counterexample", "2", "--param", "0.0625", "--n", "511"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("t,control_dist,gap_numeric,gap_closed_form,ratio_gap_over_t2"));
    let (code, _, err) = run(&["counterexample", "2", "--param", "0.12499", "--n", "511"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn bad_input_exits_with_one() {
    let missing_psi = config(r#"{"grid": {"kind": "interval", "n": 31}}"#);
    assert_eq!(run(&["solve", "--config", missing_psi.path().to_str().unwrap()]).0, 1);
    let unknown_name = config(r#"{"grid": {"kind": "interval", "n": 31}, "psi": "z + 1"}"#);
    assert_eq!(run(&["solve", "--config", unknown_name.path().to_str().unwrap()]).0, 1);
    let not_json = config("grid = 3");
    assert_eq!(run(&["solve", "--config", not_json.path().to_str().unwrap()]).0, 1);
    assert_eq!(run(&["solve", "--config", "/nonexistent/config.json"]).0, 1);
    assert_eq!(run(&["counterexample", "2", "--param", "0.2"]).0, 1);
    assert_eq!(run(&["counterexample", "4"]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
}
