//! CLI contract: exit codes, error channels, and on-disk effects for the
//! paths the acceptance suite's happy runs never hit.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pcasgd")
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn validate_accepts_every_preset() {
    for name in ["rosenbrock-3agents.toml", "rastrigin-3agents.toml", "quadratic-pl.toml"] {
        let out = run(&["validate", preset(name).to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
        let text = stdout(&out);
        assert!(text.contains("all invariants hold"), "{name}: {text}");
        assert!(text.contains("e2"), "{name} should print spectral quantities");
    }
}

#[test]
fn invalid_cluster_partition_exits_2() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    // Agent 3 appears in two clusters: not a partition.
    std::fs::write(
        &path,
        r#"
[topology]
preset = "complete"
n_agents = 3
clusters = [[1, 3], [2, 3]]
delay = 2

[objective]
kind = "quadratic-pl"
dimension = 2

[algorithm]
variant = "pc-fixed"
eta = 0.1
theta = 0.5
lambda = 0.5
iterations = 10

[run]
seeds = [1]
"#,
    )
    .unwrap();
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn missing_config_exits_2() {
    let out = run(&["run", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn unknown_override_key_exits_2() {
    let out = run(&[
        "run",
        preset("quadratic-pl.toml").to_str().unwrap(),
        "--override",
        "algorithm.warp_factor=9",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("warp_factor"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_sweep_axis_exits_2() {
    let out = run(&[
        "sweep",
        preset("quadratic-pl.toml").to_str().unwrap(),
        "--axis",
        "entropy",
        "--values",
        "1,2",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("entropy"));
}

#[test]
fn missing_trace_file_exits_1() {
    let out = run(&[
        "bounds",
        "/nonexistent/trace.csv",
        preset("quadratic-pl.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
}

#[test]
fn divergent_run_exits_3_and_still_writes_the_trace() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "run",
        preset("rosenbrock-3agents.toml").to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "algorithm.eta=10.0",
        "--override",
        "algorithm.iterations=50",
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("divergence detected"));
    assert!(stdout(&out).contains("DIVERGED"));

    let trace_path = dir.path().join("trace_pc-fixed_seed1.csv");
    let text = std::fs::read_to_string(&trace_path).expect("trace written despite divergence");
    assert!(text.contains("# divergence = true"), "divergence flag missing from trace");
    assert!(
        !dir.path().join("bounds_pc-fixed_seed1.txt").exists(),
        "no bound report should be produced for a divergent run"
    );
}

#[test]
fn single_seed_flag_runs_only_that_seed() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "run",
        preset("quadratic-pl.toml").to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"trace_pc-fixed_seed7.csv".to_string()), "{names:?}");
    assert!(names.contains(&"bounds_pc-fixed_seed7.txt".to_string()), "{names:?}");
    assert_eq!(names.len(), 2, "exactly one seed's outputs expected: {names:?}");
}
