use std::path::Path;
use std::process::{Command, Output};

fn mlhs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlhs"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn small_linear_config(dir: &Path) {
    std::fs::write(
        dir.join("cfg.toml"),
        "experiment = \"linear_toy\"\nseeds = [3]\n\n[linear]\nn_traj = 4\nn_steps = 20\nlambdas = [1.0, 1000.0]\nn_test = 2\n",
    )
    .unwrap();
}

#[test]
fn print_defaults_round_trips_through_config() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["linear_toy", "rd_sweep", "ns_sweep"] {
        let out = mlhs(dir.path(), &["--print-defaults", kind]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("experiment = \"{kind}\"")));
        let path = dir.path().join(format!("{kind}.toml"));
        std::fs::write(&path, &text).unwrap();
        let back = mlhs::experiment::ExperimentConfig::load(&path).unwrap();
        assert_eq!(back.to_toml_string(), text);
    }
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "unknown_key = 1\n").unwrap();
    let out = mlhs(dir.path(), &["--config", "bad.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mlhs(dir.path(), &["--config", "missing.toml", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_upstream_artifact_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    small_linear_config(dir.path());
    let out = mlhs(dir.path(), &["--config", "cfg.toml", "train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn linear_pipeline_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    small_linear_config(dir.path());
    let cfg = ["--config", "cfg.toml"];
    for step in [&["gen-data", "--export-csv", "csv"][..], &["train"], &["simulate"]] {
        let args: Vec<&str> = cfg.iter().chain(step).copied().collect();
        let out = mlhs(dir.path(), &args);
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("csv/linear_s3.csv").exists());
    assert!(dir.path().join("artifacts/linear_s3_ols.bin").exists());

    let out = mlhs(dir.path(), &["--config", "cfg.toml", "verify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    std::fs::write(dir.path().join("artifacts/linear_s3.bin"), b"tampered").unwrap();
    let out = mlhs(dir.path(), &["--config", "cfg.toml", "verify"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn linear_experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_linear_config(dir.path());
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = mlhs(dir.path(), &["--config", "cfg.toml", "experiment"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(dir.path().join("results/linear_curves.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
