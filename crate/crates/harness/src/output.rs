//! Run artifacts: metrics CSV, summary, θ, manifest and optional ensemble dump.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::experiments::{json_vec, RunOutput};
use crate::metrics::write_csv;
use crate::HarnessError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const THETA_FILE: &str = "theta.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENSEMBLE_FILE: &str = "ensemble.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct WrittenFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub theta: PathBuf,
    pub manifest: PathBuf,
    pub ensemble: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Golden oracle file recorded in manifests: `$IMPDIFF_GOLDEN`, else
/// `golden/oracles.json` under the working directory.
pub fn golden_path() -> PathBuf {
    std::env::var_os("IMPDIFF_GOLDEN")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("golden").join("oracles.json"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn pretty(v: &impl serde::Serialize) -> Result<Vec<u8>, HarnessError> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

pub fn manifest(cfg: &ExperimentConfig, metrics_sha: &str) -> Result<Value, HarnessError> {
    let golden = golden_path();
    let golden_entry = match std::fs::read(&golden) {
        Ok(bytes) => json!({ "path": golden.display().to_string(), "sha256": sha256_hex(&bytes) }),
        Err(_) => Value::Null,
    };
    Ok(json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg)?,
        "experiment": cfg.experiment.name(),
        "golden": golden_entry,
        "metrics_sha256": metrics_sha,
        "seed": cfg.seed()?,
    }))
}

pub fn emit_outputs(out: &RunOutput, dir: &Path) -> Result<WrittenFiles, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let cfg = &out.config;
    let mut csv = Vec::new();
    write_csv(&mut csv, cfg.experiment, &out.rows, cfg.output.wall_ms)?;
    let files = WrittenFiles {
        metrics: dir.join(METRICS_FILE),
        summary: dir.join(SUMMARY_FILE),
        theta: dir.join(THETA_FILE),
        manifest: dir.join(MANIFEST_FILE),
        ensemble: cfg.output.dump_ensemble.then(|| dir.join(ENSEMBLE_FILE)),
    };
    write(&files.metrics, &csv)?;
    write(&files.summary, &pretty(&out.summary)?)?;
    write(&files.theta, &pretty(&json!({ "theta": json_vec(&out.terminal_theta) }))?)?;
    write(&files.manifest, &pretty(&manifest(cfg, &sha256_hex(&csv))?)?)?;
    if let (Some(path), Some(ens)) = (&files.ensemble, &out.terminal_ensemble) {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record((0..ens.dim()).map(|a| format!("x{a}")))?;
        for p in ens.points() {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(files)
}

/// Configuration stored in a manifest written by [`emit_outputs`].
pub fn config_from_manifest(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    let cfg = v
        .get("config")
        .cloned()
        .ok_or_else(|| HarnessError::Config(format!("{}: no `config` entry", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_value(cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Byte comparison of two traces; `Some((line, a, b))` at the first difference.
pub fn compare_files(a: &Path, b: &Path) -> Result<Option<(usize, String, String)>, HarnessError> {
    let ta = std::fs::read_to_string(a).map_err(|e| HarnessError::io(a, e))?;
    let tb = std::fs::read_to_string(b).map_err(|e| HarnessError::io(b, e))?;
    if ta == tb {
        return Ok(None);
    }
    let (mut la, mut lb) = (ta.lines(), tb.lines());
    let mut n = 1;
    loop {
        match (la.next(), lb.next()) {
            (Some(x), Some(y)) if x == y => n += 1,
            (x, y) => {
                return Ok(Some((
                    n,
                    x.unwrap_or("<end>").to_string(),
                    y.unwrap_or("<end>").to_string(),
                )))
            }
        }
    }
}
