//! Contract tests for the `macoff` binary: exit codes, output schemas, and
//! the audit failure path.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use macoff::audit::reference_tasks;
use macoff::model::{generate_scenario, CellConfig, ScenarioConfig, SystemParams};
use macoff::sim::{ExperimentSpec, SweepVariable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_macoff"))
}

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let config = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: reference_tasks(),
    };
    let scenario = generate_scenario(4, &config, 42).unwrap();
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn solve_happy_path_writes_json_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out_path = dir.path().join("allocation.json");
    let out = run(bin().args([
        "solve",
        "--scenario",
        scenario.to_str().unwrap(),
        "--scheme",
        "fullma-binary-greedy",
        "--out",
        out_path.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(doc["offload_set"].is_array());
    assert!(doc["energy"]["total"].as_f64().unwrap() >= 0.0);
    assert_eq!(doc["scheme"], "fullma-greedy");
    assert!(doc["config_digest"].as_str().unwrap().len() == 64);
    // one-line summary on stdout
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
}

#[test]
fn solve_infeasible_partial_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = ScenarioConfig {
        params: SystemParams::default(),
        cell: CellConfig::default(),
        tasks: reference_tasks()
            .into_iter()
            .map(|mut t| {
                t.latency = t.downlink_seconds; // no budget at all
                t
            })
            .collect(),
    };
    let scenario = generate_scenario(4, &config, 7).unwrap();
    let path = dir.path().join("scenario.json");
    fs::write(&path, serde_json::to_string(&scenario).unwrap()).unwrap();
    let out = run(bin().args([
        "solve",
        "--scenario",
        path.to_str().unwrap(),
        "--scheme",
        "fullma-partial",
    ]));
    assert_eq!(out.status.code(), Some(3));
    let line = String::from_utf8(out.stdout).unwrap();
    let doc: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(doc["error"], "infeasible");
}

#[test]
fn malformed_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    let out = run(bin().args([
        "solve",
        "--scenario",
        path.to_str().unwrap(),
        "--scheme",
        "fullma-greedy",
    ]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scheme_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = run(bin().args([
        "solve",
        "--scenario",
        scenario.to_str().unwrap(),
        "--scheme",
        "semaphore",
    ]));
    assert_eq!(out.status.code(), Some(2));
}

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        id: "cli-test".into(),
        schemes: vec![
            "fullma-greedy".parse().unwrap(),
            "no-offloading".parse().unwrap(),
            "fullma-greedy-eqlat".parse().unwrap(),
        ],
        sweep: SweepVariable::TaskScale,
        sweep_values: vec![1.0],
        n_realizations: 2,
        seed: 3,
        cell: CellConfig::default(),
        params: SystemParams::default(),
        tasks: reference_tasks(),
    }
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&small_spec()).unwrap()).unwrap();
    let rows = dir.path().join("rows.csv");
    let out = run(bin().args([
        "sweep",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        rows.to_str().unwrap(),
        "--quiet",
    ]));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&rows).unwrap();
    assert!(text.starts_with("# experiment=cli-test seed=3 config_digest="));
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("experiment,scheme,sweep,realization,"));
    // 1 sweep value x 2 realizations x 3 schemes
    assert_eq!(text.lines().count(), 2 + 6);
    let summary = fs::read_to_string(dir.path().join("rows_summary.csv")).unwrap();
    assert!(summary.lines().count() >= 2 + 3);
}

#[test]
fn sweep_rejects_bad_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    let mut spec = small_spec();
    spec.sweep_values = vec![2.0, 1.0];
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = run(bin().args([
        "sweep",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        dir.path().join("rows.csv").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn audit_zero_instances_is_a_no_op() {
    let out = run(bin().args(["audit", "--instances", "0"]));
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn audit_small_run_passes_and_perturbation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(bin().args([
        "audit",
        "--instances",
        "3",
        "--seed",
        "5",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(0), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS lp-oracle-equivalence"));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["pass"], true);

    let out = run(bin().args([
        "audit",
        "--instances",
        "3",
        "--seed",
        "5",
        "--inject-perturbation",
        "0.01",
        "--quiet",
    ]));
    assert_eq!(out.status.code(), Some(1));
}
