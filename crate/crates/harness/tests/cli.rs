use std::path::Path;
use std::process::{Command, Output};

use mlopt_harness::config::{AutoOr, ExperimentConfig, MethodKind};

fn mlopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlopt")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, config: &ExperimentConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, config.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(kind: MethodKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_method(kind);
    c.problem.n_x = 20;
    c.problem.n_y = 5;
    c.problem.reference_level = 1024.0;
    c.sweep.epsilons = vec![0.25, 0.125];
    c.sweep.replicates = 2;
    c
}

#[test]
fn schedule_prints_closed_forms() {
    let o = mlopt(&["schedule"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("closed_form_cost"));
    // 7 default tolerances for each of two schedule kinds
    assert_eq!(text.lines().filter(|l| l.starts_with("ml ") || l.starts_with("sl ")).count(), 14);
}

#[test]
fn forward_check_reports_a_rate() {
    let o = mlopt(&["forward-check", "--max-exponent", "8", "--reference-exponent", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("fitted rate "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(rate >= 1.0, "{rate}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"sweep": {"replicates": 2, "seeds": 3}}"#).unwrap();
    let o = mlopt(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sweep.seeds"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = mlopt(&["schedule", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unsorted_tolerances_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(MethodKind::Teki);
    c.sweep.epsilons = vec![0.1, 0.2];
    let path = dir.path().join("c.json");
    std::fs::write(&path, c.to_json()).unwrap();
    let o = mlopt(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sweep.epsilons"));
}

#[test]
fn descent_single_run_prints_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "gd.json", &small(MethodKind::Gd));
    let out = dir.path().join("out");
    let o = mlopt(&["descent", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("iteration,level,cost,error"));
    assert!(text.contains("# final error"));
    assert!(out.join("gd_ml_trace.csv").exists());
}

#[test]
fn subcommand_rejects_other_methods() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "teki.json", &small(MethodKind::Teki));
    let o = mlopt(&["descent", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("method.kind"));
}

#[test]
fn eki_and_ils_single_runs_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let teki = write_config(dir.path(), "teki.json", &small(MethodKind::Teki));
    let o = mlopt(&["eki", "--config", &teki, "--schedule", "sl", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("schedule sl"));

    let mut ils = small(MethodKind::Ils);
    ils.method.ensemble_size = Some(30);
    let ils = write_config(dir.path(), "ils.json", &ils);
    let o = mlopt(&["ils", "--config", &ils, "--epsilon", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(MethodKind::Ils);
    c.method.ensemble_size = Some(30);
    c.method.tau_interval = Some(1.0);
    c.method.step = Some(1.0);
    c.method.e0 = Some(AutoOr::Value(10.0));
    let config = write_config(dir.path(), "ils.json", &c);
    let o = mlopt(&["ils", "--config", &config]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn sweep_counts_divergent_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(MethodKind::Ils);
    c.method.ensemble_size = Some(30);
    c.method.tau_interval = Some(1.0);
    c.method.step = Some(1.0);
    c.method.e0 = Some(AutoOr::Value(10.0));
    let config = write_config(dir.path(), "ils.json", &c);
    let out = dir.path().join("out");
    let o = mlopt(&["sweep", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = mlopt_harness::sweep::read_csv(&out.join("records.csv")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.failures == 2 && r.error_mean.is_nan()));
}

#[test]
fn sweep_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "teki.json", &small(MethodKind::Teki));
    let out = dir.path().join("out");
    let o = mlopt(&["sweep", "--config", &config, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("figure.svg").exists());

    std::fs::remove_file(out.join("figure.svg")).unwrap();
    let o = mlopt(&["plot", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("figure.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn plotting_no_records_warns_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    mlopt_harness::sweep::write_csv(&[], &csv).unwrap();
    let out = dir.path().join("out");
    let o = mlopt(&["plot", "--input", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(!out.join("figure.svg").exists());
}
