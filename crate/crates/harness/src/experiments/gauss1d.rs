//! Pipelined finetuning of the one-dimensional diffusion, checked against
//! the closed-form θ path.

use std::collections::BTreeMap;

use impdiff_core::estimators::{Diffusion1dClosedForm, NegSquaredDistance};
use impdiff_core::optimizers::{run_double_queue_adjoint, run_implicit_finite_queue, InitialDistribution, StepView};
use impdiff_core::oracles::{diffusion1d_theta_path, CoupledOdeSolution};
use impdiff_core::samplers::{DiffusionDrift, DiffusionSlotSampler};
use serde_json::Value;

use super::{json_f64, stream, RunOutput, Ticker};
use crate::config::{ExperimentConfig, Pipeline};
use crate::metrics::MetricsRow;
use crate::HarnessError;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let rng = stream(cfg)?;
    let g = cfg.gauss1d.clone();
    let h = g.horizon / g.slots as f64;
    let eta_step = g.eta * h;
    let path: Option<CoupledOdeSolution> = if g.eta > 0.0 {
        Some(diffusion1d_theta_path(g.theta0, g.theta_target, g.eta, g.horizon)?)
    } else {
        None
    };
    let p0 = InitialDistribution::Gaussian {
        n: cfg.n,
        mean: vec![0.0],
        stddev: 1.0,
        antithetic: g.antithetic,
    };
    let oracle = path.clone();
    let make = move |view: &StepView<'_>| -> Result<MetricsRow, HarnessError> {
        let theta = view.theta[0];
        let expected = oracle.as_ref().map_or(g.theta0, |p| p.theta(view.k as f64 * h));
        Ok(MetricsRow {
            parallel_depth: Some(view.parallel_depth),
            theta: Some(theta),
            theta_error: Some((theta - g.theta_target).abs()),
            oracle_theta_error: Some(theta - expected),
            sample_mean: Some(view.ensemble.mean()[0]),
            ..Default::default()
        })
    };
    let mut ticker = Ticker::new(cfg.cadence, cfg.steps, make);
    let drift = DiffusionDrift::sde(g.horizon);
    let trace = match g.pipeline {
        Pipeline::Queue => {
            let mut sampler = DiffusionSlotSampler::new(drift, g.slots, g.substeps)?;
            sampler.antithetic = g.antithetic;
            let est = Diffusion1dClosedForm {
                theta_target: g.theta_target,
                horizon: g.horizon,
            };
            run_implicit_finite_queue(
                &[g.theta0],
                &p0,
                g.slots,
                cfg.steps,
                &sampler,
                &est,
                eta_step,
                &rng,
                g.warm_start,
                &mut ticker,
            )?
        }
        Pipeline::DoubleQueue => {
            // −∇E[−(Y−θ*)²] is twice the closed-form Γ
            let reward = NegSquaredDistance::new(vec![g.theta_target]);
            run_double_queue_adjoint(
                &[g.theta0],
                &p0,
                g.slots,
                cfg.steps,
                &drift,
                &reward,
                eta_step / 2.0,
                &rng,
                &mut ticker,
            )?
        }
    };
    let rows = ticker.finish()?;

    let theta = trace.terminal_theta[0];
    let mut summary = BTreeMap::new();
    summary.insert("terminal_theta".into(), json_f64(theta));
    summary.insert("terminal_error".into(), json_f64((theta - g.theta_target).abs()));
    summary.insert("gradient_evaluations".into(), Value::from(trace.gradient_evaluations()));
    summary.insert("parallel_depth".into(), Value::from(trace.parallel_depth()));
    let t_end = trace.records.len() as f64 * h;
    summary.insert("terminal_time".into(), json_f64(t_end));
    if let Some(p) = &path {
        summary.insert("oracle_terminal_theta".into(), json_f64(p.theta(t_end)));
        summary.insert("oracle_terminal_error".into(), json_f64((p.theta(t_end) - g.theta_target).abs()));
    }
    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        summary,
        terminal_theta: trace.terminal_theta,
        terminal_ensemble: trace.terminal_ensemble,
    })
}
