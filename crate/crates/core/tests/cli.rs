use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ridge_solver::cli::read_trajectory;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridge-solver")).current_dir(dir).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_bilinear_reaches_the_center() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve", "--problem", "bilinear", "--method", "stonr", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&dir.path().join("o/bilinear_stonr.json"));
    assert_eq!(s["status"], "solved");
    assert!(s["final_gap"].as_f64().unwrap() <= 1e-3);
    let pt: Vec<f64> = s["final_point"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((pt[0] - 0.5).abs() <= 1e-2 && (pt[1] - 0.5).abs() <= 1e-2, "{pt:?}");
    let traj = read_trajectory(&dir.path().join("o/bilinear_stonr.csv")).unwrap();
    assert_eq!(traj.records[0].point, vec![0.0, 0.0]);
}

#[test]
fn neg_square_stops_on_the_boundary() {
    // V vanishes at the corner (-1,-1), an exact solution on the boundary,
    // so the solver stops there at once and reports success.
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["solve", "--problem", "neg_square", "--out", "o"]);
    let s = json(&dir.path().join("o/neg_square_stonr.json"));
    assert_eq!(s["status"], "solved");
    assert_eq!(s["final_point"], serde_json::json!([-1.0, -1.0]));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn baseline_budget_exhaustion_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "solve",
            "--problem",
            "f2",
            "--method",
            "gda",
            "--init",
            "-0.9,-0.9",
            "--steps",
            "1000",
            "--record-every",
            "100",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let text = fs::read_to_string(dir.path().join("o/f2_gda.csv")).unwrap();
    // Header, the start, ten thinned rows, the terminal row.
    assert_eq!(text.lines().count(), 1 + 1 + 10 + 1);
}

#[test]
fn plot_of_an_empty_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    assert_eq!(run(dir.path(), &["plot", "empty.csv"]).status.code(), Some(1));
    fs::write(dir.path().join("header.csv"), "step,epoch,i,S,event,x1,x2,V1,V2\n0,0,1,0,end:solved,,,,\n").unwrap();
    assert_eq!(run(dir.path(), &["plot", "header.csv"]).status.code(), Some(1));
}

#[test]
fn plot_writes_an_svg() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["solve", "--problem", "bilinear", "--out", "o"]);
    let out = run(dir.path(), &["plot", "o/bilinear_stonr.csv", "--problem", "bilinear", "--out", "p.svg"]);
    assert_eq!(out.status.code(), Some(0));
    let svg = fs::read_to_string(dir.path().join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn plot_refuses_three_dimensional_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "step,epoch,i,S,event,x1,x2,x3,V1,V2,V3\n0,0,1,0,start,0,0,0,1,1,1\n0,0,1,0,end:max-steps,0,0,0,1,1,1\n",
    )
    .unwrap();
    let out = run(dir.path(), &["plot", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2-dimensional"));
}

#[test]
fn malformed_config_is_a_usage_error_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        "{\n  \"schema\": 1,\n  \"problem\": \"f1\",\n  \"solver\": {\"step_size\": \"big\"}\n}\n",
    )
    .unwrap();
    let out = run(dir.path(), &["solve", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
    // Nothing ran, so nothing was written.
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_values_never_start_a_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"schema": 1, "problem": "f1", "solver": {"exit_tol": -1}}"#).unwrap();
    let out = run(dir.path(), &["solve", "--config", "c.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("o").exists());
    let out = run(dir.path(), &["solve", "--problem", "nope", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flags_and_subcommands_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["solve", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["launch"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"schema": 1, "problem": "f2", "method": "eg", "init": [0.05, 0.05], "baseline": {"steps": 10}}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["solve", "--config", "c.json", "--steps", "100000", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let s = json(&dir.path().join("o/f2_eg.json"));
    assert_eq!(s["status"], "solved");
}

#[test]
fn check_passes_on_bilinear() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["check", "--problem", "bilinear", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json(&dir.path().join("o/bilinear_check.json"));
    assert_eq!(r["parity"]["pivots"]["passed"], true);
    assert_eq!(r["assumptions"]["a1_restricted"]["status"], "pass");
}

#[test]
fn compare_writes_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["compare", "--problem", "bilinear", "--init", "0.6,0.6", "--init", "0.2,0.9", "--steps", "300", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");
    assert!(o.join("bilinear_stonr.csv").exists());
    for m in ["gda", "eg", "ogda", "ftr"] {
        for k in 1..=2 {
            assert!(o.join(format!("bilinear_{m}_{k}.csv")).exists(), "{m} {k}");
        }
    }
    let svg = fs::read_to_string(o.join("bilinear_compare.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 9);
    let summary = json(&o.join("bilinear_compare.json"));
    assert_eq!(summary.as_array().unwrap().len(), 9);
}

#[test]
fn compare_refuses_problems_that_cannot_be_drawn() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"schema": 1, "problem": {"affine": {"matrix": [[1,0,0],[0,1,0],[0,0,1]], "offset": [-0.5,-0.5,-0.5]}}}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["compare", "--config", "c.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2-dimensional"));
    // The same problem solves fine without a picture.
    let out = run(dir.path(), &["solve", "--config", "c.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out =
            run(dir.path(), &["solve", "--problem", "f2", "--perturb", "linear_map:1e-3", "--seed", "7", "--out", sub]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a/f2_stonr.csv")).unwrap();
    let b = fs::read(dir.path().join("b/f2_stonr.csv")).unwrap();
    assert_eq!(a, b);
    let other =
        run(dir.path(), &["solve", "--problem", "f2", "--perturb", "linear_map:1e-3", "--seed", "8", "--out", "c"]);
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(a, fs::read(dir.path().join("c/f2_stonr.csv")).unwrap());
}
