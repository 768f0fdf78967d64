//! Experiment recipes. Each returns its metric rows plus a JSON summary.

mod finite_state;
mod gauss1d;
mod langevin_reward;
mod langevin_scratch;
mod rates;

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use impdiff_core::optimizers::{Observer, StepView};
use impdiff_core::{ParticleEnsemble, RngStream};
use serde_json::Value;

use crate::config::{Experiment, ExperimentConfig};
use crate::metrics::MetricsRow;
use crate::HarnessError;

pub use langevin_reward::loglik_metric;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub summary: BTreeMap<String, Value>,
    pub terminal_theta: Vec<f64>,
    pub terminal_ensemble: Option<ParticleEnsemble>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::LangevinReward => langevin_reward::run(cfg),
        Experiment::LangevinScratch => langevin_scratch::run(cfg),
        Experiment::Gauss1d => gauss1d::run(cfg),
        Experiment::Rates => rates::run(cfg),
        Experiment::FiniteState => finite_state::run(cfg),
    }
}

pub(crate) fn stream(cfg: &ExperimentConfig) -> Result<RngStream, HarnessError> {
    Ok(RngStream::new(cfg.seed()?).with_experiment(cfg.experiment.stream_id()))
}

/// `{"theta": [...]}` as written next to every run's metrics.
pub fn read_theta(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    v.get("theta")
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| HarnessError::Config(format!("{}: expected a `theta` array of numbers", path.display())))
}

/// Observer that builds a metrics row at every cadence tick and at the last
/// step, and can end the run once a row satisfies `stop`.
pub(crate) struct Ticker<F> {
    cadence: u64,
    total: u64,
    start: Instant,
    rows: Vec<MetricsRow>,
    make: F,
    stop: Option<Box<dyn Fn(&MetricsRow) -> bool>>,
    error: Option<HarnessError>,
}

impl<F> Ticker<F>
where
    F: FnMut(&StepView<'_>) -> Result<MetricsRow, HarnessError>,
{
    pub fn new(cadence: u64, total: u64, make: F) -> Self {
        Self {
            cadence,
            total,
            start: Instant::now(),
            rows: Vec::new(),
            make,
            stop: None,
            error: None,
        }
    }

    pub fn stop_when(mut self, f: impl Fn(&MetricsRow) -> bool + 'static) -> Self {
        self.stop = Some(Box::new(f));
        self
    }

    pub fn finish(self) -> Result<Vec<MetricsRow>, HarnessError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.rows),
        }
    }
}

impl<F> Observer for Ticker<F>
where
    F: FnMut(&StepView<'_>) -> Result<MetricsRow, HarnessError>,
{
    fn on_step(&mut self, view: &StepView<'_>) -> ControlFlow<()> {
        if !view.k.is_multiple_of(self.cadence) && view.k != self.total {
            return ControlFlow::Continue(());
        }
        match (self.make)(view) {
            Ok(mut row) => {
                row.k = view.k;
                row.gradient_evaluations = view.gradient_evaluations;
                row.wall_ms = self.start.elapsed().as_secs_f64() * 1e3;
                let stop = self.stop.as_ref().is_some_and(|f| f(&row));
                self.rows.push(row);
                if stop {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            }
            Err(e) => {
                self.error = Some(e);
                ControlFlow::Break(())
            }
        }
    }

    fn theta_every(&self) -> u64 {
        self.cadence
    }
}

pub(crate) fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub(crate) fn json_vec(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| json_f64(*x)).collect())
}
