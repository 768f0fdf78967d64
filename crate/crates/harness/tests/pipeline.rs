use std::path::{Path, PathBuf};
use std::process::Command;

use impdiff::config::{Algorithm, Experiment, ExperimentConfig};
use impdiff::golden::golden_values;
use impdiff::output::{compare_files, config_from_manifest, emit_outputs, MANIFEST_FILE, METRICS_FILE};
use impdiff::{run_experiment, HarnessError};
use serde_json::Value;

fn small(exp: Experiment, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(exp);
    c.seed = Some(seed);
    match exp {
        Experiment::LangevinReward => c.steps = 30,
        Experiment::LangevinScratch => {
            c.steps = 40;
            c.cadence = 10;
            c.n = 200;
        }
        Experiment::Gauss1d => {
            c.gauss1d.slots = 32;
            c.steps = 64;
        }
        Experiment::Rates => {
            c.steps = 32;
            c.rates.grid_pts = 61;
        }
        Experiment::FiniteState => c.steps = 20,
    }
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_impdiff"))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn cadence_one_gives_one_row_per_step() {
    let mut c = small(Experiment::LangevinReward, 3);
    c.steps = 10;
    c.cadence = 1;
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&run_experiment(&c).unwrap(), dir.path()).unwrap();
    let text = std::fs::read_to_string(files.metrics).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("k,gradient_evaluations,"));
    assert!(lines[1].starts_with("1,1,"));
    assert!(lines[10].starts_with("10,10,"));
}

#[test]
fn reruns_are_byte_identical_and_manifests_replay() {
    for exp in Experiment::ALL {
        let c = small(exp, 5);
        let (a, b, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        emit_outputs(&run_experiment(&c).unwrap(), a.path()).unwrap();
        emit_outputs(&run_experiment(&c).unwrap(), b.path()).unwrap();
        for f in [METRICS_FILE, MANIFEST_FILE, "summary.json", "theta.json"] {
            let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            assert_eq!(x, y, "{exp}: {f} differs");
        }
        let replayed = config_from_manifest(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(replayed, c);
        emit_outputs(&run_experiment(&replayed).unwrap(), r.path()).unwrap();
        let diff = compare_files(&a.path().join(METRICS_FILE), &r.path().join(METRICS_FILE)).unwrap();
        assert_eq!(diff, None, "{exp}");
    }
}

#[test]
fn seeds_change_the_trace() {
    let a = run_experiment(&small(Experiment::LangevinReward, 1)).unwrap();
    let b = run_experiment(&small(Experiment::LangevinReward, 2)).unwrap();
    assert_ne!(a.rows, b.rows);
}

#[test]
fn manifest_is_sorted_and_complete() {
    let c = small(Experiment::FiniteState, 9);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&run_experiment(&c).unwrap(), dir.path()).unwrap();
    let text = std::fs::read_to_string(files.manifest).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        ["code_version", "config", "experiment", "golden", "metrics_sha256", "seed"]
    );
    assert_eq!(v["seed"], 9);
    let metrics = std::fs::read(files.metrics).unwrap();
    assert_eq!(v["metrics_sha256"], impdiff::output::sha256_hex(&metrics));
}

#[test]
fn missing_seed_and_theta_opt_are_reported() {
    assert!(ExperimentConfig::load(Experiment::Gauss1d, None, &[], None).is_err());
    let mut c = small(Experiment::LangevinReward, 1);
    c.algorithm.kind = Algorithm::LangevinThetaOpt;
    assert!(matches!(run_experiment(&c), Err(HarnessError::MissingThetaOpt)));
}

#[test]
fn committed_golden_file_matches_the_oracles() {
    let text = std::fs::read_to_string(repo_root().join("golden/oracles.json")).unwrap();
    let committed: Value = serde_json::from_str(&text).unwrap();
    let fresh = serde_json::to_value(golden_values().unwrap()).unwrap();
    // the last bit may differ between optimization levels
    assert!(close(&committed, &fresh), "{committed}\n{fresh}");
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-13 * x.abs().max(y.abs()).max(1.0)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(u, v)| close(u, v)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, u)| y.get(k).is_some_and(|v| close(u, v)))
        }
        _ => a == b,
    }
}

#[test]
fn cli_run_compare_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let status = bin()
        .args(["run", "finite-state", "--seed", "4", "--override", "steps=15", "--out"])
        .arg(&a)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin().arg("rerun").arg(a.join(MANIFEST_FILE)).arg("--out").arg(&b).status().unwrap();
    assert!(status.success());
    let out = bin().arg("compare").arg(a.join(METRICS_FILE)).arg(b.join(METRICS_FILE)).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "identical");

    std::fs::write(b.join(METRICS_FILE), "k\n0\n").unwrap();
    let out = bin().arg("compare").arg(a.join(METRICS_FILE)).arg(b.join(METRICS_FILE)).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["run", "gauss1d", "--out"]).arg(dir.path().join("c")).output().unwrap();
    assert!(!out.status.success(), "a run without --seed must be rejected");
    let out = bin()
        .args(["run", "rates", "--seed", "1", "--override", "rates.nope=1", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_defaults_round_trip_through_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["defaults", "gauss1d"]).output().unwrap();
    assert!(out.status.success());
    let path = dir.path().join("g.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    let loaded = ExperimentConfig::load(Experiment::Gauss1d, Some(&path), &[], Some(3)).unwrap();
    let mut expect = ExperimentConfig::defaults(Experiment::Gauss1d);
    expect.seed = Some(3);
    assert_eq!(loaded, expect);
}
