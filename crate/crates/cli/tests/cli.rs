//! Black-box checks of the `ambient` binary: argument handling, exit
//! codes, and the one-line diagnostics contract.

use std::path::Path;
use std::process::{Command, Output};

fn ambient() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ambient"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    ambient()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn reason_prints_the_correction_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reason", "eat -> basketball -> teeth"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("corrected: teeth -> hand_wash -> eat -> basketball"), "{stdout}");
    assert!(stdout.contains("complex: unhygienic behavior"), "{stdout}");
}

#[test]
fn reason_accepts_aliases_and_satisfied_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reason", "brush teeth -> wash hands -> eat"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("complex: none"), "{stdout}");
}

#[test]
fn user_errors_are_one_line_diagnostics_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reason", "moonwalk -> eat"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let error_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(error_lines.len(), 1, "{stderr}");
    assert!(!stderr.contains("panicked"), "{stderr}");

    let out = run(&["eval", "--corpus", "missing", "--model", "missing.bin"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["e2e", "--scenario", "time-travel"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ambient.toml");
    std::fs::write(&config, "[paths]\ncorpus_dir = \"c\"\nwarp_drive = 9\n").unwrap();
    let out = run(
        &["--config", config.to_str().unwrap(), "reason", "eat"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("warp_drive"), "{stderr}");
}

#[test]
fn every_run_logs_its_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reason", "eat -> teeth"], dir.path());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("config[reason]:"), "{stderr}");
}

#[test]
fn gen_writes_scenario_traces_that_reload() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("scenario.csv");
    let out = run(
        &[
            "gen",
            "--scenario",
            "medication",
            "--out",
            trace_path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let trace = ambient_core::trace::load_trace(&trace_path).unwrap();
    assert_eq!(trace.sample_rate_hz(), 90.0);
    assert_eq!(trace.len(), 4 * 6 * 90);
}

#[test]
fn rules_flag_loads_a_custom_dsl_file() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("house.rules");
    std::fs::write(
        &rules,
        "alert on \"fall\" severity critical label \"fall detected\" msg \"Call for help.\"\n",
    )
    .unwrap();
    let out = run(
        &["reason", "run -> fall", "--rules", rules.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("complex: fall detected"), "{stdout}");

    std::fs::write(&rules, "precde \"a\"\n").unwrap();
    let out = run(
        &["reason", "eat", "--rules", rules.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
