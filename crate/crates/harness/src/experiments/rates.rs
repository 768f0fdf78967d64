//! Squared gradient norm along a two-timescale run, from the quadrature
//! finite-difference oracle.

use std::collections::BTreeMap;

use impdiff_core::estimators::{IndicatorGaussianReward, LinearReward, Reward, RewardCovariance};
use impdiff_core::optimizers::{run_implicit_infinite, ImplicitOptions, InitialDistribution, StepView, ThetaStep};
use impdiff_core::oracles::{finite_difference_grad, quadrature_loss, GridSpec, QuadratureObjective};
use impdiff_core::potentials::{MixturePotential, Potential, QuadraticPotential, WeightParam};
use impdiff_core::samplers::LangevinSampler;
use impdiff_core::{ParamVector, StepSchedule};
use serde_json::Value;

use super::langevin_scratch::kl_target_to_kde;
use super::{json_f64, json_vec, stream, RunOutput, Ticker};
use crate::config::{ExperimentConfig, RatesProblem};
use crate::metrics::MetricsRow;
use crate::HarnessError;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    match cfg.rates.problem {
        RatesProblem::Hexagon => {
            let pot = MixturePotential::hexagon(cfg.hexagon.radius, WeightParam::Softmax)?;
            let reward = IndicatorGaussianReward {
                mu: cfg.hexagon.reward_mu.clone(),
            };
            run_with(cfg, pot, reward, cfg.hexagon.theta0.clone())
        }
        RatesProblem::QuadraticLinear => run_with(cfg, QuadraticPotential::new(1), LinearReward::new(vec![1.0]), vec![0.0]),
    }
}

fn run_with<P, R>(cfg: &ExperimentConfig, pot: P, reward: R, theta0: Vec<f64>) -> Result<RunOutput, HarnessError>
where
    P: Potential + Clone + 'static,
    R: Reward + Clone + 'static,
{
    let rng = stream(cfg)?;
    let r = &cfg.rates;
    let a = &cfg.algorithm;
    let d = pot.dim();
    let grid = GridSpec::square(d, r.grid_half_width, r.grid_pts);
    let schedule = StepSchedule::new(a.schedule, r.c1, a.eps_base, a.schedule_offset)?;
    let p0 = InitialDistribution::standard_normal(cfg.n, d);
    let sampler = LangevinSampler::new(pot.clone(), r.c1);
    let estimator = RewardCovariance {
        potential: pot.clone(),
        reward: reward.clone(),
    };

    let grad_sq = {
        let (pot, reward, grid, h) = (pot.clone(), reward.clone(), grid.clone(), r.fd_h);
        move |theta: &[f64]| -> Result<f64, HarnessError> {
            let obj = QuadratureObjective::reward_only(&reward);
            let loss = |t: &[f64]| quadrature_loss(&pot, &ParamVector::new(t.to_vec())?, &obj, &grid);
            let g = finite_difference_grad(loss, theta, h)?;
            Ok(g.iter().map(|v| v * v).sum())
        }
    };
    let (mut sum, mut ticks) = (0.0, 0u64);
    let metric_reward = reward.clone();
    let make = move |view: &StepView<'_>| -> Result<MetricsRow, HarnessError> {
        let g2 = grad_sq(view.theta)?;
        sum += g2;
        ticks += 1;
        let avg = sum / ticks as f64;
        let k = view.k as f64;
        let ratio = (view.k > 1).then(|| avg / (k.ln() * k.powf(-1.0 / 3.0)));
        let mean_reward = view.ensemble.points().map(|x| metric_reward.eval(x)).sum::<f64>() / view.ensemble.len() as f64;
        Ok(MetricsRow {
            mean_reward: Some(mean_reward),
            grad_norm_sq: Some(g2),
            grad_norm_sq_running_avg: Some(avg),
            rate_ratio: ratio,
            ..Default::default()
        })
    };
    let mut ticker = Ticker::new(cfg.cadence, cfg.steps, make);
    let trace = run_implicit_infinite(
        &theta0,
        &p0,
        cfg.steps,
        &sampler,
        &estimator,
        ThetaStep::Schedule(schedule),
        ImplicitOptions::default(),
        &rng,
        &mut ticker,
    )?;
    let rows = ticker.finish()?;

    let mut summary = BTreeMap::new();
    summary.insert("terminal_theta".into(), json_vec(&trace.terminal_theta));
    summary.insert("schedule".into(), serde_json::to_value(schedule)?);
    if let Some(ens) = &trace.terminal_ensemble {
        let stationary = grid.density(&pot, &ParamVector::new(trace.terminal_theta.clone())?)?;
        // KL(p_K ‖ π*(θ_K)) with p_K smoothed onto the grid
        let kde = impdiff_core::oracles::kde_on_grid(ens, &grid)?;
        summary.insert("terminal_kl_to_stationary".into(), json_f64(kde.kl_to(&stationary)?));
        summary.insert(
            "terminal_kl_stationary_to_sample".into(),
            json_f64(kl_target_to_kde(&stationary, &grid, ens)?),
        );
    }
    let at = |k: u64| {
        rows.iter()
            .rev()
            .find(|r| r.k <= k)
            .and_then(|r| r.grad_norm_sq_running_avg)
            .map_or(Value::Null, json_f64)
    };
    summary.insert("running_avg_at_256".into(), at(256));
    summary.insert("running_avg_at_512".into(), at(512));
    summary.insert("running_avg_at_end".into(), at(cfg.steps));
    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        summary,
        terminal_theta: trace.terminal_theta,
        terminal_ensemble: trace.terminal_ensemble,
    })
}
