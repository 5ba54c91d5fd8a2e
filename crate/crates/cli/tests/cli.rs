use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn small() -> Value {
    json!({
        "experiment": "cli_small",
        "n_agents": 3,
        "window_B": 2,
        "noise_nu": 0.25,
        "noise_kappa2": 0.75,
        "mirror_map": "euclidean_half_sq_norm",
        "regularizer_local": "l1",
        "lambda1": 0.1,
        "set_kind": "box",
        "set_params": {"lo": -2.0, "hi": 2.0},
        "problem_variant": "problem1",
        "objective_kind": "least_abs_dev",
        "dim": 2,
        "grad_noise_sigma": 0.2,
        "method": "dscmd_n",
        "horizon_T": 300,
        "trials_M": 3,
        "plot": true
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisy-opt"))
        .args(args)
        .env("NOISY_OPT_JOBS", "2")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let out = dir.path().join("out");
    let o = cli(&["run", &cfg, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "series.csv", "summary.json", "plot.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    assert!(csv.starts_with("T,agent,mean_err,stderr,bound,disagreement,disagreement_bound\n"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["horizon_T"], 300);
    assert!(manifest["derived"]["constants"]["C1"].is_number());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["checks"].as_array().unwrap().iter().all(|c| c["pass"].is_boolean()));
}

#[test]
fn out_of_range_kappa2_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["noise_kappa2"] = json!(1.5);
    let cfg = write(dir.path(), "c.json", &v);
    let o = cli(&["run", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("noise_kappa2") && err.contains("(0,1]"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["step_size"] = json!(0.1);
    let cfg = write(dir.path(), "c.json", &v);
    let o = cli(&["run", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_size"));
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&cli(&["run", &cfg, "--output-dir", a.to_str().unwrap(), "--jobs", "1"])), 0);
    assert_eq!(code(&cli(&["run", &cfg, "--output-dir", b.to_str().unwrap(), "--jobs", "3"])), 0);
    assert_eq!(fs::read(a.join("series.csv")).unwrap(), fs::read(b.join("series.csv")).unwrap());
}

#[test]
fn seed_override_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&cli(&["run", &cfg, "--output-dir", a.to_str().unwrap()])), 0);
    assert_eq!(code(&cli(&["run", &cfg, "--output-dir", b.to_str().unwrap(), "--seed-override", "99"])), 0);
    assert_ne!(fs::read(a.join("series.csv")).unwrap(), fs::read(b.join("series.csv")).unwrap());
    let m: Value = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["master_seed"], 99);
}

#[test]
fn verify_shipped_mixing_experiment_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["verify", "lemma1_mixing", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS mixing_violations: measured 0"), "{stdout}");
}

#[test]
fn tampered_expectation_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["expect"] = json!({"slope_min": 0.5});
    let cfg = write(dir.path(), "c.json", &v);
    let o = cli(&["verify", &cfg, "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL rate_slope"));
}

#[test]
fn unknown_verify_target_is_a_validation_error() {
    assert_eq!(code(&cli(&["verify", "no_such_experiment"])), 2);
}

#[test]
fn sweep_writes_one_directory_per_value_and_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let out = dir.path().join("sweep");
    let o = cli(&["sweep", &cfg, "--axis", "kappa2", "--values", "0.25,0.5,0.75,1.0", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for v in ["0.25", "0.5", "0.75", "1"] {
        assert!(out.join(v).join("series.csv").exists(), "{v}");
    }
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 5);
    assert!(cmp.starts_with("kappa2,slope,"));
}

#[test]
fn empty_sweep_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    assert_eq!(code(&cli(&["sweep", &cfg, "--axis", "kappa2", "--values"])), 2);
    assert_eq!(code(&cli(&["sweep", &cfg, "--axis", "step", "--values", "1"])), 2);
}

#[test]
fn sweep_over_n_grows_the_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let out = dir.path().join("sweep");
    let o = cli(&["sweep", &cfg, "--axis", "N", "--values", "2,4,8", "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let constants: Vec<Value> = ["2", "4", "8"]
        .iter()
        .map(|n| {
            let m: Value = serde_json::from_str(&fs::read_to_string(out.join(n).join("manifest.json")).unwrap()).unwrap();
            m["derived"]["constants"].clone()
        })
        .collect();
    for key in ["C1", "C2", "C3", "C4", "C5", "C6"] {
        let vals: Vec<f64> = constants.iter().map(|c| c[key].as_f64().unwrap()).collect();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2], "{key}: {vals:?}");
        if key != "C1" {
            assert!(vals[0] < vals[2], "{key}: {vals:?}");
        }
    }
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &small());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = cli(&["run", &cfg, "--output-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
