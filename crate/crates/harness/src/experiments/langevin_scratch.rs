//! Contrastive training from a far initialization on the hexagon plus an
//! origin well.

use std::collections::BTreeMap;

use impdiff_core::estimators::{Contrastive, ReferenceSource};
use impdiff_core::optimizers::{run_implicit_infinite, ImplicitOptions, InitialDistribution, StepView, ThetaStep};
use impdiff_core::oracles::{kde_on_grid, GridSpec};
use impdiff_core::potentials::{stationary_quadrature, MixturePotential, WeightParam};
use impdiff_core::samplers::LangevinSampler;
use impdiff_core::{ParamVector, ParticleEnsemble};
use serde_json::Value;

use super::{json_f64, json_vec, stream, RunOutput, Ticker};
use crate::config::{ExperimentConfig, ThetaOptimizer};
use crate::metrics::MetricsRow;
use crate::HarnessError;

/// `KL(target ‖ KDE(ens))` on the grid of `target`.
pub(crate) fn kl_target_to_kde(
    target: &impdiff_core::potentials::GridDistribution,
    grid: &GridSpec,
    ens: &ParticleEnsemble,
) -> Result<f64, HarnessError> {
    Ok(target.kl_to(&kde_on_grid(ens, grid)?)?)
}

pub(super) fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let rng = stream(cfg)?;
    let s = &cfg.scratch;
    let a = &cfg.algorithm;
    let pot = MixturePotential::hexagon_with_origin(cfg.hexagon.radius, WeightParam::Softmax)?;
    let hw = s.grid_half_width;
    let theta_star = ParamVector::new(s.theta_star.clone())?;
    let target = stationary_quadrature(&pot, &theta_star, &[-hw, -hw], &[hw, hw], s.grid_pts)?;
    let kl_grid = GridSpec::square(2, hw, s.kl_grid_pts);
    let kl_target = kl_grid.density(&pot, &theta_star)?;

    let p0 = InitialDistribution::standard_normal(cfg.n, 2);
    let sampler = LangevinSampler::new(pot.clone(), a.gamma_x);
    let estimator = Contrastive {
        potential: pot.clone(),
        reference: ReferenceSource::Grid {
            grid: target,
            n: s.reference_n,
        },
    };
    let initial = p0.draw(&impdiff_core::optimizers::init_stream(&rng, 0, 0))?;
    let kl_initial = kl_target_to_kde(&kl_target, &kl_grid, &initial)?;

    let (tgt, grid) = (kl_target.clone(), kl_grid.clone());
    let make = move |view: &StepView<'_>| -> Result<MetricsRow, HarnessError> {
        Ok(MetricsRow {
            kl_to_target: Some(kl_target_to_kde(&tgt, &grid, view.ensemble)?),
            ..Default::default()
        })
    };
    let mut ticker = Ticker::new(cfg.cadence, cfg.steps, make);
    let trace = run_implicit_infinite(
        &s.theta0,
        &p0,
        cfg.steps,
        &sampler,
        &estimator,
        match s.optimizer {
            ThetaOptimizer::Sgd => ThetaStep::Constant { eta: a.gamma_theta },
            ThetaOptimizer::Adam => ThetaStep::Adam { lr: a.gamma_theta },
        },
        ImplicitOptions::default(),
        &rng,
        &mut ticker,
    )?;
    let rows = ticker.finish()?;

    let mut summary = BTreeMap::new();
    summary.insert("terminal_theta".into(), json_vec(&trace.terminal_theta));
    summary.insert("initial_kl_to_target".into(), json_f64(kl_initial));
    if let Some(last) = rows.last() {
        summary.insert("terminal_kl_to_target".into(), last.kl_to_target.map_or(Value::Null, json_f64));
    }
    let m = initial.mean();
    let v = initial.variance();
    summary.insert("initial_mean".into(), json_vec(&m));
    summary.insert("initial_variance".into(), json_vec(&v));
    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        summary,
        terminal_theta: trace.terminal_theta,
        terminal_ensemble: trace.terminal_ensemble,
    })
}
