//! Reward training on the hexagon mixture with the six sampling algorithms.

use std::collections::BTreeMap;

use impdiff_core::estimators::{IndicatorGaussianReward, Reward, RewardCovariance, SigmoidGaussianReward};
use impdiff_core::optimizers::{
    run_fixed_langevin, run_guided_langevin, run_implicit_infinite, run_nested_loop, run_unroll_last_step,
    ImplicitOptions, InitialDistribution, StepView, ThetaStep,
};
use impdiff_core::potentials::{stationary_quadrature, MixturePotential, Potential, WeightParam};
use impdiff_core::samplers::LangevinSampler;
use impdiff_core::{ParamVector, ParticleEnsemble, StepSchedule};
use serde_json::Value;

use super::{json_f64, json_vec, read_theta, stream, RunOutput, Ticker};
use crate::config::{Algorithm, ExperimentConfig, LoglikMode};
use crate::metrics::{first_crossing, MetricsRow};
use crate::HarnessError;

/// Batch mean of `log π*(θ_opt)[x]` up to `log_z` (0 for the unnormalized
/// metric).
pub fn loglik_metric<P: Potential + ?Sized>(pot: &P, theta_opt: &[f64], ens: &ParticleEnsemble, log_z: f64) -> f64 {
    let s: f64 = ens.points().map(|x| -pot.value(x, theta_opt)).sum();
    s / ens.len() as f64 - log_z
}

fn mean_reward<R: Reward + ?Sized>(r: &R, ens: &ParticleEnsemble) -> f64 {
    ens.points().map(|x| r.eval(x)).sum::<f64>() / ens.len() as f64
}

pub(super) fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let rng = stream(cfg)?;
    let h = &cfg.hexagon;
    let a = &cfg.algorithm;
    let pot = MixturePotential::hexagon(h.radius, WeightParam::Softmax)?;
    let reward = IndicatorGaussianReward { mu: h.reward_mu.clone() };
    let smooth = SigmoidGaussianReward::new(h.reward_mu.clone(), a.sigmoid_tau)?;
    let p0 = InitialDistribution::standard_normal(cfg.n, 2);

    let theta_opt = match &cfg.output.theta_opt {
        Some(path) => {
            let t = read_theta(path)?;
            if t.len() != pot.num_params() {
                return Err(HarnessError::Config(format!(
                    "theta_opt has {} entries, the hexagon needs {}",
                    t.len(),
                    pot.num_params()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let log_z = match (&theta_opt, cfg.output.loglik) {
        (Some(t), LoglikMode::Normalized) => {
            // wide box: [−4, 4]² cuts ≈ 0.2% of the mass off the outer modes
            let grid = stationary_quadrature(&pot, &ParamVector::new(t.clone())?, &[-7.0, -7.0], &[7.0, 7.0], 561)?;
            grid.log_z()
        }
        _ => 0.0,
    };

    let metric_pot = pot.clone();
    let metric_reward = reward.clone();
    let opt = theta_opt.clone();
    let make = move |view: &StepView<'_>| -> Result<MetricsRow, HarnessError> {
        Ok(MetricsRow {
            mean_reward: Some(mean_reward(&metric_reward, view.ensemble)),
            loglik_under_theta_opt: opt.as_ref().map(|t| loglik_metric(&metric_pot, t, view.ensemble, log_z)),
            ..Default::default()
        })
    };
    let mut ticker = Ticker::new(cfg.cadence, cfg.steps, make);
    if let Some(stop) = cfg.output.stop_at_loglik {
        ticker = ticker.stop_when(move |r| r.loglik_under_theta_opt.is_some_and(|v| v >= stop));
    }

    let sampler = LangevinSampler::new(pot.clone(), a.gamma_x);
    let estimator = RewardCovariance {
        potential: pot.clone(),
        reward: reward.clone(),
    };
    let theta_step = match a.schedule {
        impdiff_core::ScheduleKind::Constant => ThetaStep::Constant { eta: a.gamma_theta },
        kind => ThetaStep::Schedule(StepSchedule::new(kind, a.gamma_x, a.eps_base, a.schedule_offset)?),
    };
    let trace = match a.kind {
        Algorithm::LangevinTheta0 => run_fixed_langevin(&h.theta0, &p0, cfg.steps, &sampler, &rng, &mut ticker)?,
        Algorithm::LangevinThetaOpt => {
            let t = theta_opt.as_ref().ok_or(HarnessError::MissingThetaOpt)?;
            run_fixed_langevin(t, &p0, cfg.steps, &sampler, &rng, &mut ticker)?
        }
        Algorithm::Implicit => run_implicit_infinite(
            &h.theta0,
            &p0,
            cfg.steps,
            &sampler,
            &estimator,
            theta_step,
            ImplicitOptions::default(),
            &rng,
            &mut ticker,
        )?,
        Algorithm::Guided => run_guided_langevin(
            &h.theta0,
            &p0,
            cfg.steps,
            pot.clone(),
            smooth.clone(),
            a.guidance_lambda,
            a.gamma_x,
            &rng,
            &mut ticker,
        )?,
        Algorithm::Nested => run_nested_loop(
            &h.theta0,
            &p0,
            a.inner_steps,
            cfg.steps,
            &sampler,
            &estimator,
            a.gamma_theta,
            &rng,
            &mut ticker,
        )?,
        Algorithm::Unroll => run_unroll_last_step(
            &h.theta0,
            &p0,
            a.inner_steps,
            cfg.steps,
            &pot,
            &smooth,
            a.gamma_x,
            a.unroll_eta,
            &rng,
            &mut ticker,
        )?,
    };
    let rows = ticker.finish()?;

    let mut summary = BTreeMap::new();
    summary.insert("algorithm".into(), serde_json::to_value(a.kind)?);
    summary.insert("terminal_theta".into(), json_vec(&trace.terminal_theta));
    summary.insert("gradient_evaluations".into(), Value::from(trace.gradient_evaluations()));
    summary.insert("stopped_early".into(), Value::from(trace.stopped_early));
    if let Some(ens) = &trace.terminal_ensemble {
        summary.insert("terminal_mean_reward".into(), json_f64(mean_reward(&reward, ens)));
    }
    if theta_opt.is_some() {
        let crossings: serde_json::Map<String, Value> = cfg
            .output
            .thresholds
            .iter()
            .map(|t| {
                let at = first_crossing(&rows, |r| r.loglik_under_theta_opt, *t);
                (t.to_string(), at.map_or(Value::Null, Value::from))
            })
            .collect();
        summary.insert("loglik_crossings".into(), Value::Object(crossings));
    }
    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        summary,
        terminal_theta: trace.terminal_theta,
        terminal_ensemble: trace.terminal_ensemble,
    })
}
