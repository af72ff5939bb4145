use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dunkl-sparse"))
        .args(args)
        .env_remove("DUNKL_SPARSE_CACHE")
        .output()
        .unwrap()
}

fn config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "resolution = 64\nsamples = 200\nsparse_trials = 3\ncheck_resolution = false\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn run_dyadic_passes_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("out");
    let o = cli(&["run", "--config", &cfg, "--exp", "dyadic", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pass dyadic"));
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["blocks"][0]["name"], "dyadic");
    assert!(out.join("trials.csv").exists());
}

#[test]
fn report_goes_to_stdout_without_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let o = cli(&["kernel", "check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["blocks"][0]["name"], "kernel");
}

#[test]
fn identical_runs_give_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let strip = |o: Output| {
        let mut v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["wall_seconds"] = serde_json::Value::Null;
        v
    };
    let a = strip(cli(&["sparse", "dominate", "--config", &cfg, "--seed", "4"]));
    let b = strip(cli(&["sparse", "dominate", "--config", &cfg, "--seed", "4"]));
    assert_eq!(a, b);
}

#[test]
fn failing_block_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad_lower.toml");
    std::fs::write(&path, "resolution = 64\n[lower]\ncenter = [0.9]\n").unwrap();
    let o = cli(&["bounds", "lower", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL lower"));
}

#[test]
fn bad_input_exits_with_two() {
    let o = cli(&["run", "--exp", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    let o = cli(&["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, "resolutoin = 64\n").unwrap();
    assert_eq!(cli(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(2));
    // Unknown subcommands are rejected by the argument parser.
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn dyadic_build_reports_every_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("cubes");
    let o = cli(&["dyadic", "build", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.matches("properties pass").count(), 3, "{err}");
    let systems: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("dyadic.json")).unwrap()).unwrap();
    assert_eq!(systems.as_array().unwrap().len(), 3);
}
