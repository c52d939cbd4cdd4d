//! End-to-end checks of the `kljn` binary: flags, exit codes, file layout,
//! and the thread-count-invariance guarantee.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kljn_cli::runner::{Summary, TRIALS_HEADER};

fn kljn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kljn"))
        .args(args)
        .output()
        .expect("spawn kljn")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"
name = "tiny-cli"
trials = 8
master_seed = 99
[loop]
low_ohm = 2000.0
high_ohm = 9000.0
n_oc = 10.0
[loop.cable]
variant = "resistive"
resistance_ohm = 300.0
length_m = 2.0
[[attacks]]
op = "mean_square_attack"
"#;

fn write_tiny(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn list_presets_names_every_builtin() {
    let out = kljn(&["list-presets"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    for name in kljn_cli::presets::names() {
        assert!(text.contains(name), "listing is missing {name}:\n{text}");
    }
}

#[test]
fn run_produces_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_tiny(dir.path());
    let out_dir = dir.path().join("report");
    let out = kljn(&[
        "run",
        "--scenario",
        &scenario,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let trials = fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    let mut lines = trials.lines();
    assert_eq!(lines.next().unwrap(), TRIALS_HEADER);
    assert_eq!(lines.count(), 8);

    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.scenario, "tiny-cli");
    assert_eq!(summary.attacks["mean_square_attack"].trials, 8);

    assert!(out_dir.join("plots/u2_levels.csv").exists());
    assert!(out_dir.join("plots/plot.py").exists());
    let text = stdout_of(&out);
    assert!(text.contains("mean_square_attack"), "stdout:\n{text}");
}

#[test]
fn trials_and_seed_flags_override_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_tiny(dir.path());
    let out_dir = dir.path().join("report");
    let out = kljn(&[
        "run",
        "--scenario",
        &scenario,
        "--trials",
        "3",
        "--seed",
        "1234",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.trials_per_point, 3);
    assert_eq!(summary.master_seed, 1234);
}

#[test]
fn thread_count_never_changes_output_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_tiny(dir.path());
    let mut got: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("report-{threads}"));
        let out = kljn(&[
            "run",
            "--scenario",
            &scenario,
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        got.push((
            fs::read(out_dir.join("trials.csv")).unwrap(),
            fs::read(out_dir.join("summary.json")).unwrap(),
        ));
    }
    assert_eq!(got[0].0, got[1].0, "trials.csv differs across --threads");
    assert_eq!(got[0].1, got[1].1, "summary.json differs across --threads");
}

#[test]
fn validate_accepts_presets_and_pinpoints_bad_keys() {
    let out = kljn(&["validate", "--scenario", "mingesz2008"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).starts_with("ok:"));

    // An undersampled loop must be refused before any simulation starts,
    // naming the offending key.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, TINY.replace("n_oc = 10.0", "sample_rate_hz = 2e4")).unwrap();
    let out = kljn(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("sample_rate_hz"), "stderr: {err}");
    println!("validation error reads: {}", err.trim());
}

#[test]
fn unknown_preset_exits_1_and_lists_the_catalog() {
    let out = kljn(&["run", "--scenario", "no-such-preset"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(
        err.contains("mingesz2008"),
        "should list presets, got: {err}"
    );
}

#[test]
fn plots_on_a_fresh_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kljn(&["plots", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("summary.json"));
}

#[test]
fn plots_regenerates_from_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_tiny(dir.path());
    let out_dir = dir.path().join("report");
    let out = kljn(&[
        "run",
        "--scenario",
        &scenario,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    fs::remove_file(out_dir.join("plots/plot.py")).unwrap();
    let out = kljn(&["plots", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("plots/plot.py").exists(), "plot.py is back");
}

#[test]
fn bad_flags_exit_1_and_help_exits_0() {
    let out = kljn(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = kljn(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("run"));
}
