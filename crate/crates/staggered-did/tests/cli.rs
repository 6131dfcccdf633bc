//! End-to-end tests of the `staggered-did` binary: behavior, formats,
//! exit codes, and a golden-file check of the canonical JSON output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_staggered-did")
}

fn toy_panel() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy.csv")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn estimate_json_matches_golden_file() {
    let panel = toy_panel();
    let out = run(&[
        "estimate",
        panel.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "1",
        "--boot-reps",
        "200",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let golden_path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/estimate_toy.json");
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(stdout(&out), golden, "canonical JSON drifted from the golden file");
}

#[test]
fn estimate_reports_hand_computed_effect() {
    let panel = toy_panel();
    let out = run(&[
        "estimate",
        panel.to_str().unwrap(),
        "--format",
        "json",
        "--skip-bootstrap",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // Zero first period, so the estimate is the second-period difference in
    // group means: (3 + 5)/2 - (1 + 1)/2 = 3.
    assert!((parsed["tau_hat"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(parsed["n_units"], 4);
    assert_eq!(parsed["variances"].as_array().unwrap().len(), 2);
    let total = parsed["decomposition"]["total"].as_f64().unwrap();
    assert!((total - 3.0).abs() < 1e-10);
}

#[test]
fn estimate_table_and_csv_render() {
    let panel = toy_panel();
    let table = run(&["estimate", panel.to_str().unwrap(), "--boot-reps", "50"]);
    assert!(table.status.success());
    let text = stdout(&table);
    assert!(text.contains("DID estimate: 3.000000"), "{text}");
    assert!(text.contains("Variance estimates"));

    let csv = run(&[
        "estimate",
        panel.to_str().unwrap(),
        "--format",
        "csv",
        "--boot-reps",
        "50",
    ]);
    assert!(csv.status.success());
    let text = stdout(&csv);
    assert!(text.starts_with("key,value\n"));
    assert!(text.contains("tau_hat,3\n"), "{text}");
}

#[test]
fn estimate_missing_cell_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "unit,time,outcome,adoption\n\
         a,1,0.0,2\na,2,3.0,2\n\
         b,1,0.0,never\n",
    )
    .unwrap();
    let out = run(&["estimate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("unit b is missing time 2"), "{err}");
}

#[test]
fn estimate_degenerate_design_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("degenerate.csv");
    std::fs::write(
        &path,
        "unit,time,outcome,adoption\n\
         a,1,0.0,2\na,2,3.0,2\n\
         b,1,0.0,2\nb,2,5.0,2\n",
    )
    .unwrap();
    let out = run(&["estimate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no exposure variation"), "{}", stderr(&out));
}

#[test]
fn simulate_single_row() {
    let out = run(&[
        "simulate", "--design", "A", "--pi", "I", "--n", "30", "--sims", "1",
        "--boot-reps", "2", "--seed", "4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("design,pi,N,v_exact"));
    assert!(lines[1].starts_with("A,I,30,"));
    for field in lines[1].split(',').skip(3) {
        let v: f64 = field.parse().unwrap();
        assert!(v.is_finite());
    }
}

#[test]
fn simulate_all_produces_sixteen_rows() {
    let out = run(&[
        "simulate", "--all", "--sims", "2", "--boot-reps", "2", "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 17);
    let first_col: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        first_col,
        ["A", "B", "C", "D", "A", "B", "C", "D", "A", "B", "C", "D", "A", "B", "C", "D"]
    );
}

#[test]
fn simulate_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(
        &path,
        r#"{"design":"B","pi":"II","n":30,"n_sims":3,"n_boot":4,"seed":9}"#,
    )
    .unwrap();
    let out = run(&["simulate", "--config", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = parsed.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["design"], "B");
    assert_eq!(rows[0]["n_sims"], 3);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"design":"E","pi":"II","n":30,"n_sims":3,"seed":9}"#).unwrap();
    let out = run(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_passes_and_guards() {
    let out = run(&["oracle", "--n", "6", "--t", "2", "--counts", "0,3,3", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("estimand         PASS"), "{text}");
    assert!(text.contains("exact-variance   PASS"), "{text}");
    assert!(text.contains("conservative     PASS"), "{text}");

    // Counts over dates 1..3 leave a singleton group: the conservative
    // check is skipped but the moment checks still run.
    let out = run(&["oracle", "--n", "6", "--t", "3", "--counts", "3,2,1", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("SKIP"));

    // Support too large to enumerate.
    let out = run(&["oracle", "--n", "30", "--t", "2", "--counts", "0,15,15", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("support too large"), "{}", stderr(&out));
}

#[test]
fn pretest_reports_and_validates() {
    let panel = toy_panel();
    let out = run(&[
        "pretest", panel.to_str().unwrap(), "--perms", "200", "--seed", "3",
        "--format", "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // Identical (all-zero) first-period outcomes: p must be exactly one.
    assert_eq!(parsed["p_value"].as_f64().unwrap(), 1.0);

    let out = run(&["pretest", panel.to_str().unwrap(), "--perms", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_json_round_trips_schema() {
    let panel = toy_panel();
    let out = run(&[
        "estimate", panel.to_str().unwrap(), "--format", "json", "--seed", "2",
        "--boot-reps", "100",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["n_units", "n_periods", "groups", "tau_hat", "decomposition", "variances",
        "weights", "seed", "boot_reps"]
    {
        assert!(parsed.get(key).is_some(), "missing key {key}");
    }
    let methods: Vec<&str> = parsed["variances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["did", "lz", "b1", "b2"]);
}
