//! End-to-end checks of the command-line harness.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A deliberately tiny task so each invocation stays fast.
const SMALL_CONFIG: &str = "[dataset]
num_classes = 4
input_dim = 8
samples_per_client = 20

[partition]
num_clients = 6
classes_per_client = 2

[model]
hidden_dim = 6

[training]
rounds = 2
epochs = 1
batch_size = 5

[run]
seed = 3
";

fn fedcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcap"))
        .args(args)
        .output()
        .expect("binary invocation")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.ini");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn run_prints_summary_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = fedcap(&["--config", &config, "--out", &out.to_string_lossy()]);
        assert!(output.status.success(), "{}", stderr_of(&output));
        let summary: serde_json::Value =
            serde_json::from_slice(&output.stdout).expect("stdout is pure summary JSON");
        assert_eq!(summary["seed"], 3);
    }
    for name in ["config.txt", "rounds.csv", "summary.json"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical across reruns");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("run");
    let output = fedcap(&[
        "--config",
        &config,
        "--seed",
        "11",
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 11);
}

#[test]
fn refuses_to_overwrite_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("run");
    let first = fedcap(&["--config", &config, "--out", &out.to_string_lossy()]);
    assert!(first.status.success(), "{}", stderr_of(&first));

    let second = fedcap(&["--config", &config, "--out", &out.to_string_lossy()]);
    assert!(!second.status.success(), "rerun into a full directory must fail");
    assert!(stderr_of(&second).contains("error:"));

    let forced = fedcap(&[
        "--config",
        &config,
        "--out",
        &out.to_string_lossy(),
        "--force",
    ]);
    assert!(forced.status.success(), "{}", stderr_of(&forced));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[training]\nrond = 2\n");
    let output = fedcap(&["--config", &config]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("rond"), "error names the bad key");
}

#[test]
fn missing_config_flag_is_an_error() {
    let output = fedcap(&[]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("--config is required"));
}

#[test]
fn sweep_expands_grid_into_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let grid_path = dir.path().join("grid.ini");
    fs::write(&grid_path, "[fedcap]\nalpha = 2, 10\n").unwrap();
    let out = dir.path().join("sweep");
    let output = fedcap(&[
        "--config",
        &config,
        "--sweep",
        &grid_path.to_string_lossy(),
        "--out",
        &out.to_string_lossy(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("swept 2 runs"), "progress goes to stderr");
    assert!(out.join("grid_000/summary.json").exists());
    assert!(out.join("grid_001/summary.json").exists());
    assert!(out.join("index.json").exists());
}

#[test]
fn plotdata_merges_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "1"), (&out_b, "2")] {
        let output = fedcap(&[
            "--config",
            &config,
            "--seed",
            seed,
            "--out",
            &out.to_string_lossy(),
        ]);
        assert!(output.status.success(), "{}", stderr_of(&output));
    }
    let merged = dir.path().join("plot.csv");
    let output = fedcap(&[
        "--export-plotdata",
        &merged.to_string_lossy(),
        "--run-dir",
        &out_a.to_string_lossy(),
        "--run-dir",
        &out_b.to_string_lossy(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let text = fs::read_to_string(&merged).unwrap();
    let mut lines = text.lines().skip_while(|line| line.starts_with('#'));
    let header = lines.next().unwrap();
    assert!(header.starts_with("run,"), "long format keyed by run: {header}");
    assert!(lines.count() >= 4, "rows from both runs");
}
