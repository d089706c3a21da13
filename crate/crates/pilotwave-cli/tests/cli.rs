//! End-to-end contract of the `pilotwave` binary: exit codes, validation
//! diagnostics, artifact layout, seed handling, and reproducibility.

use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pilotwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pilotwave"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_summary(dir: &Path) -> Value {
    let text = fs::read_to_string(dir.join("summary.json")).expect("summary.json written");
    serde_json::from_str(&text).expect("summary parses")
}

/// A small, fast scenario for plumbing tests.
const SMALL_TRAJECTORIES: &str = r#"
kind = "trajectories"
name = "small"

[grid]
points = 64
extent = 20.0

[physics]
hbar = 1.0
mass = 1.0
potential = "free"

[[state.packets]]
center = 0.0
sigma = 1.0
momentum = 0.0

[run]
duration = 0.2
dt = 2e-3
stride = 10
samples = 200
seed = 3
substeps = 2

[output]
fields = 5
trajectories = 20
bins = 16

[assert]
norm_drift = 1e-9
crossings = 0
"#;

#[test]
fn list_scenarios_names_every_shipped_run() {
    let out = pilotwave(&["list-scenarios"]);
    assert_eq!(exit_code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for name in [
        "evolve-free",
        "evolve-harmonic",
        "free-gaussian",
        "harmonic-coherent",
        "two-packet",
        "born-0.3",
        "stern-gerlach-z",
        "spin-precession-x",
        "hj-compare",
    ] {
        assert!(text.contains(name), "missing scenario `{name}` in:\n{text}");
    }
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    let list = pilotwave(&["list-scenarios"]);
    let names: Vec<String> = String::from_utf8_lossy(&list.stdout)
        .lines()
        .filter_map(|l| l.split_whitespace().next().map(str::to_string))
        .collect();
    assert!(names.len() >= 9);
    for name in names {
        let out = pilotwave(&["validate", &name]);
        assert_eq!(exit_code(&out), 0, "{name}: {}", stderr(&out));
    }
}

#[test]
fn validate_collects_every_problem_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(
        &path,
        r#"kind = "wobble"
name = "broken"

[grid]
points = 8
extent = -1.0

[physics]
mass = 0.0

[run]
duration = 1.0
dt = 0.3
typo = true
"#,
    )
    .unwrap();
    let out = pilotwave(&["validate", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let text = stderr(&out);
    for needle in [
        "line 1", // unknown kind
        "line 5", // points too small
        "line 6", // negative extent
        "hbar",   // missing required key
        "line 13", // non-integer step ratio
        "line 14", // unknown key run.typo
    ] {
        assert!(text.contains(needle), "missing `{needle}` in:\n{text}");
    }
}

#[test]
fn missing_config_exits_with_code_two() {
    let out = pilotwave(&["run", "/no/such/file.toml"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("list-scenarios"));
}

#[test]
fn small_run_writes_every_artifact_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_TRAJECTORIES).unwrap();
    let out_dir = dir.path().join("out");
    let out = pilotwave(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));

    let summary = read_summary(&out_dir);
    assert_eq!(summary["passed"], Value::Bool(true));
    assert_eq!(summary["meta"]["scenario"], "small");
    assert_eq!(summary["meta"]["seed"], 3);
    assert!(summary["error"].is_null() || summary.get("error").is_none());
    assert!(out_dir.join("trajectories.csv").is_file());
    assert!(out_dir.join("field_0000.txt").is_file());

    // The CSV honours the trajectory cap.
    let csv = fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    let max_id = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("id,"))
        .filter_map(|l| l.split(',').next()?.parse::<usize>().ok())
        .max()
        .unwrap();
    assert!(max_id < 20, "cap of 20 trajectories exceeded: id {max_id}");
}

#[test]
fn failed_assertion_exits_one_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    // An impossible bound: norm drift is never exactly negative.
    fs::write(
        &cfg,
        SMALL_TRAJECTORIES.replace("norm_drift = 1e-9", "norm_drift = -1.0"),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pilotwave(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    let summary = read_summary(&out_dir);
    assert_eq!(summary["passed"], Value::Bool(false));
    let rows = summary["assertions"].as_array().unwrap();
    let failed = rows.iter().find(|r| r["name"] == "norm_drift").unwrap();
    assert_eq!(failed["passed"], Value::Bool(false));
}

#[test]
fn runtime_failures_exit_three_with_an_error_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("overlap.toml");
    // Identical system packets cannot be told apart: the measurement
    // pipeline must refuse at runtime, after configuration checks pass.
    fs::write(
        &cfg,
        r#"
kind = "measure"
name = "overlap"

[grid]
points = [64, 64]
extent = [16.0, 20.0]

[physics]
hbar = 1.0
mass = [10.0, 50.0]

[measure]
coefficients = [[0.5477225575051661, 0.0], [0.8366600265340756, 0.0]]
system_centers = [-0.1, 0.1]
system_sigma = 0.45
pointer_sigma = 0.5
eigenvalues = [-1.0, 1.0]
coupling = 4.0

[run]
duration = 1.0
dt = 2.5e-3
stride = 25
samples = 100
seed = 1
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pilotwave(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 3, "{}", stderr(&out));
    let summary = read_summary(&out_dir);
    assert_eq!(summary["passed"], Value::Bool(false));
    assert!(summary["error"].as_str().unwrap().contains("overlap"));
}

#[test]
fn seed_override_is_echoed_and_changes_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_TRAJECTORIES).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let run = |out_dir: &Path, extra: &[&str]| {
        let mut args =
            vec!["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = pilotwave(&args);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    };
    run(&a, &[]);
    run(&b, &["--seed-override", "99"]);
    assert_eq!(read_summary(&b)["meta"]["seed"], 99);
    let csv_a = fs::read_to_string(a.join("trajectories.csv")).unwrap();
    let csv_b = fs::read_to_string(b.join("trajectories.csv")).unwrap();
    assert_ne!(csv_a, csv_b, "different seeds produced identical samples");
}

#[test]
fn identical_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_TRAJECTORIES).unwrap();
    let mut dirs = Vec::new();
    for tag in ["a", "b"] {
        let out_dir = dir.path().join(tag);
        let out =
            pilotwave(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
        dirs.push(out_dir);
    }
    let names: Vec<String> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.len() >= 3);
    for name in names {
        let a = fs::read(dirs[0].join(&name)).unwrap();
        let b = fs::read(dirs[1].join(&name)).unwrap();
        if name == "summary.json" {
            let mut ja: Value = serde_json::from_slice(&a).unwrap();
            let mut jb: Value = serde_json::from_slice(&b).unwrap();
            ja["meta"]["timestamp"] = Value::Null;
            jb["meta"]["timestamp"] = Value::Null;
            assert_eq!(ja, jb, "summaries differ beyond the timestamp");
        } else {
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}
