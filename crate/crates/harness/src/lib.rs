//! Experiment harness: configuration, recipes, metrics and output files.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod golden;
pub mod metrics;
pub mod output;

use std::path::Path;

pub use config::{Algorithm, Experiment, ExperimentConfig, LoglikMode};
pub use experiments::{run_experiment, RunOutput};
pub use metrics::MetricsRow;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("a theta_opt file is required for this metric (output.theta_opt)")]
    MissingThetaOpt,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] impdiff_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
