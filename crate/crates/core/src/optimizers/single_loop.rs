use serde::{Deserialize, Serialize};

use super::{
    estimator_stream, init_stream, norm, require_steps, transition_stream, update_theta, InitialDistribution,
    Observer, Recorder, RunTrace, StepInfo,
};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{EstimateContext, GradientEstimator, Reward, ZeroEstimator};
use crate::potentials::{Potential, TiltedPotential};
use crate::rng::RngStream;
use crate::samplers::{langevin_step, LangevinSampler, SamplingOperator, StepContext};
use crate::schedule::StepSchedule;

/// Outer step rule of the single-loop driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaStep {
    /// `θ ← θ − η Γ`; the sampler keeps its own step size.
    Constant { eta: f64 },
    /// Two timescales: the sampler uses `γ_k` and `θ ← θ − γ_k ε_k Γ`.
    Schedule(StepSchedule),
    /// `θ ← θ − lr · m̂ / (√v̂ + 10⁻⁸)` with β = (0.9, 0.999).
    Adam { lr: f64 },
}

/// Moment state of [`ThetaStep::Adam`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(p: usize) -> Self {
        Self {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }

    /// Bias-corrected direction for the gradient `g`.
    pub fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(g)
            .map(|((m, v), &gi)| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gi;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gi * gi;
                (*m / c1) / ((*v / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

impl ThetaStep {
    fn at(&self, k: u64) -> (Option<f64>, f64, f64) {
        match self {
            ThetaStep::Constant { eta } => (None, 1.0, *eta),
            ThetaStep::Adam { lr } => (None, 1.0, *lr),
            ThetaStep::Schedule(s) => {
                let (g, e) = s.values(k);
                (Some(g), e, g * e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImplicitOptions {
    /// Advance a fresh `p0` draw each step instead of `p_k`. This is the
    /// queue of length one.
    pub reinit: bool,
}

fn ctx(k: u64, rng: &RngStream) -> EstimateContext {
    EstimateContext {
        k,
        rng: estimator_stream(rng, k),
    }
}

/// Nested loop: at each outer step restart from `p0`, run `T` sampler steps
/// at fixed `θ_k`, then `θ_{k+1} = θ_k − η Γ(p̂_k, θ_k)`.
#[allow(clippy::too_many_arguments)]
pub fn run_nested_loop<S, G>(
    theta0: &[f64],
    p0: &InitialDistribution,
    inner_steps: usize,
    outer_steps: u64,
    sampler: &S,
    gamma_fn: &G,
    eta: f64,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    S: SamplingOperator + ?Sized,
    G: GradientEstimator + ?Sized,
{
    require_steps(inner_steps as u64, "inner steps T")?;
    require_steps(outer_steps, "outer steps K")?;
    check_dim("initial distribution", sampler.dim(), p0.dim())?;
    let cost = inner_steps as u64 * sampler.evaluations_per_step();
    let mut rec = Recorder::new(obs, theta0);
    let mut theta = theta0.to_vec();
    let mut last = None;
    for k in 0..outer_steps {
        let run = || -> Result<_> {
            let mut ens = p0.draw(&init_stream(rng, 0, k))?;
            for s in 0..inner_steps {
                ens = sampler
                    .step(&ens, &theta, StepContext::slot(s), &transition_stream(rng, s, k))
                    .map_err(|e| e.at_step(k, Some(s as u64)))?;
            }
            let g = gamma_fn.estimate(&ens, &theta, &ctx(k, rng))?;
            Ok((ens, g))
        };
        let (ens, g) = run().map_err(|e| wrap(e, k))?;
        theta = update_theta(&theta, eta, &g).map_err(|e| e.at_step(k, None))?;
        let info = StepInfo {
            gamma: sampler.nominal_step(),
            eps: 1.0,
            theta_step: eta,
            grad_norm: norm(&g),
            evals: cost,
            depth: cost,
        };
        let stop = rec.step(k, &theta, &ens, info, k + 1 == outer_steps).is_break();
        last = Some(ens);
        if stop {
            break;
        }
    }
    Ok(rec.finish(last))
}

fn wrap(e: Error, k: u64) -> Error {
    match e {
        Error::AtStep { .. } => e,
        other => other.at_step(k, None),
    }
}

/// Single loop, infinite horizon: `θ_{k+1} = θ_k − step_k Γ(p_k, θ_k)` and
/// `p_{k+1} = Σ(p_k, θ_k)`. Γ sees the pre-update ensemble.
#[allow(clippy::too_many_arguments)]
pub fn run_implicit_infinite<S, G>(
    theta0: &[f64],
    p0: &InitialDistribution,
    outer_steps: u64,
    sampler: &S,
    gamma_fn: &G,
    step: ThetaStep,
    opts: ImplicitOptions,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    S: SamplingOperator + ?Sized,
    G: GradientEstimator + ?Sized,
{
    require_steps(outer_steps, "outer steps K")?;
    check_dim("initial distribution", sampler.dim(), p0.dim())?;
    let cost = sampler.evaluations_per_step();
    let mut rec = Recorder::new(obs, theta0);
    let mut theta = theta0.to_vec();
    let mut ens = p0.draw(&init_stream(rng, usize::from(opts.reinit), 0))?;
    let mut adam = matches!(step, ThetaStep::Adam { .. }).then(|| AdamState::new(theta.len()));
    for k in 0..outer_steps {
        let (gamma_k, eps_k, step_k) = step.at(k);
        let g = gamma_fn.estimate(&ens, &theta, &ctx(k, rng)).map_err(|e| wrap(e, k))?;
        check_dim("gradient estimate", theta.len(), g.len()).map_err(|e| e.at_step(k, None))?;
        let dir = match adam.as_mut() {
            Some(a) => a.direction(&g),
            None => g.clone(),
        };
        let source = if opts.reinit {
            p0.draw(&init_stream(rng, 0, k))?
        } else {
            ens
        };
        let c = StepContext {
            slot: 0,
            gamma: gamma_k,
        };
        ens = sampler
            .step(&source, &theta, c, &transition_stream(rng, 0, k))
            .map_err(|e| e.at_step(k, Some(0)))?;
        theta = update_theta(&theta, step_k, &dir).map_err(|e| e.at_step(k, None))?;
        let info = StepInfo {
            gamma: gamma_k.unwrap_or_else(|| sampler.nominal_step()),
            eps: eps_k,
            theta_step: step_k,
            grad_norm: norm(&g),
            evals: cost,
            depth: cost,
        };
        if rec.step(k, &theta, &ens, info, k + 1 == outer_steps).is_break() {
            break;
        }
    }
    Ok(rec.finish(Some(ens)))
}

/// Sampling at a fixed θ (Langevin-θ₀ and the post-training Langevin-θ_opt
/// baselines).
pub fn run_fixed_langevin<S: SamplingOperator + ?Sized>(
    theta: &[f64],
    p0: &InitialDistribution,
    outer_steps: u64,
    sampler: &S,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace> {
    let zero = ZeroEstimator {
        num_params: theta.len(),
    };
    run_implicit_infinite(
        theta,
        p0,
        outer_steps,
        sampler,
        &zero,
        ThetaStep::Constant { eta: 0.0 },
        ImplicitOptions::default(),
        rng,
        obs,
    )
}

/// Langevin on `V(·, θ₀) − λ R_smooth`; θ never changes.
#[allow(clippy::too_many_arguments)]
pub fn run_guided_langevin<P, R>(
    theta0: &[f64],
    p0: &InitialDistribution,
    outer_steps: u64,
    pot: P,
    reward: R,
    lambda: f64,
    gamma_x: f64,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    P: Potential,
    R: Reward,
{
    let tilted = TiltedPotential::new(pot, reward, lambda)?;
    let sampler = LangevinSampler::new(tilted, gamma_x);
    run_fixed_langevin(theta0, p0, outer_steps, &sampler, rng, obs)
}

/// Baseline that differentiates the batch-mean smoothed reward through the
/// last Langevin step only.
///
/// Each outer step restarts from `p0`, runs `T` steps at `θ_k`, and uses
/// `∂X_T/∂θ = −γ_X ∂θ∇ₓV(X_{T−1}, θ)` with `X_{T−1}` held fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_unroll_last_step<P, R>(
    theta0: &[f64],
    p0: &InitialDistribution,
    inner_steps: usize,
    outer_steps: u64,
    pot: &P,
    reward: &R,
    gamma_x: f64,
    eta: f64,
    rng: &RngStream,
    obs: &mut dyn Observer,
) -> Result<RunTrace>
where
    P: Potential + ?Sized,
    R: Reward + ?Sized,
{
    if !reward.is_differentiable() {
        return Err(Error::NotDifferentiable);
    }
    require_steps(inner_steps as u64, "inner steps T")?;
    require_steps(outer_steps, "outer steps K")?;
    check_dim("initial distribution", pot.dim(), p0.dim())?;
    let (d, p) = (pot.dim(), pot.num_params());
    let mut rec = Recorder::new(obs, theta0);
    let mut theta = theta0.to_vec();
    let mut last = None;
    let mut mixed = vec![0.0; p * d];
    let mut dr = vec![0.0; d];
    for k in 0..outer_steps {
        let mut ens = p0.draw(&init_stream(rng, 0, k))?;
        for s in 0..inner_steps - 1 {
            ens = langevin_step(&ens, pot, &theta, gamma_x, &transition_stream(rng, s, k))
                .map_err(|e| e.at_step(k, Some(s as u64)))?;
        }
        let s = inner_steps - 1;
        let next = langevin_step(&ens, pot, &theta, gamma_x, &transition_stream(rng, s, k))
            .map_err(|e| e.at_step(k, Some(s as u64)))?;
        let mut g = vec![0.0; p];
        for (prev, now) in ens.points().zip(next.points()) {
            pot.mixed_grad_into(prev, &theta, &mut mixed)?;
            reward.grad_into(now, &mut dr)?;
            for j in 0..p {
                g[j] += (0..d).map(|a| dr[a] * mixed[j * d + a]).sum::<f64>();
            }
        }
        // descent direction for −E[R]: −∇θ E[R] = γ_X E[∇R · ∂θ∇ₓV]
        let scale = gamma_x / next.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        theta = update_theta(&theta, eta, &g).map_err(|e| e.at_step(k, None))?;
        let info = StepInfo {
            gamma: gamma_x,
            eps: 1.0,
            theta_step: eta,
            grad_norm: norm(&g),
            evals: inner_steps as u64,
            depth: inner_steps as u64,
        };
        let stop = rec.step(k, &theta, &next, info, k + 1 == outer_steps).is_break();
        last = Some(next);
        if stop {
            break;
        }
    }
    Ok(rec.finish(last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{LinearReward, RewardCovariance, SigmoidGaussianReward};
    use crate::optimizers::NoObserver;
    use crate::potentials::{MixturePotential, QuadraticPotential, WeightParam};
    use crate::schedule::ScheduleKind;
    use crate::estimators::IndicatorGaussianReward;

    fn hex() -> MixturePotential {
        MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap()
    }

    const THETA0: [f64; 6] = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];

    #[test]
    fn frozen_outer_problem_still_counts() {
        let pot = QuadraticPotential::new(1);
        let s = LangevinSampler::new(pot.clone(), 0.1);
        let est = RewardCovariance {
            potential: pot,
            reward: LinearReward::new(vec![1.0]),
        };
        let p0 = InitialDistribution::standard_normal(20, 1);
        let t = run_nested_loop(&[0.5], &p0, 7, 4, &s, &est, 0.0, &RngStream::new(1), &mut NoObserver).unwrap();
        assert_eq!(t.terminal_theta, vec![0.5]);
        assert_eq!(t.gradient_evaluations(), 28);
        assert_eq!(t.records.len(), 4);
    }

    #[test]
    fn zero_gamma_matches_plain_langevin() {
        let pot = hex();
        let s = LangevinSampler::new(pot.clone(), 0.05);
        let p0 = InitialDistribution::standard_normal(30, 2);
        let rng = RngStream::new(3);
        let a = run_implicit_infinite(
            &THETA0,
            &p0,
            25,
            &s,
            &ZeroEstimator { num_params: 6 },
            ThetaStep::Constant { eta: 0.5 },
            ImplicitOptions::default(),
            &rng,
            &mut NoObserver,
        )
        .unwrap();
        let b = run_fixed_langevin(&THETA0, &p0, 25, &s, &rng, &mut NoObserver).unwrap();
        assert_eq!(a.terminal_ensemble, b.terminal_ensemble);
        assert_eq!(a.terminal_theta, THETA0.to_vec());
    }

    #[test]
    fn linear_reward_pushes_theta_up() {
        let pot = QuadraticPotential::new(1);
        let s = LangevinSampler::new(pot.clone(), 0.1);
        let est = RewardCovariance {
            potential: pot,
            reward: LinearReward::new(vec![1.0]),
        };
        let sched = StepSchedule::new(ScheduleKind::Thm2, 0.1, 1.0, 1).unwrap();
        let t = run_implicit_infinite(
            &[0.0],
            &InitialDistribution::standard_normal(200, 1),
            200,
            &s,
            &est,
            ThetaStep::Schedule(sched),
            ImplicitOptions::default(),
            &RngStream::new(4),
            &mut NoObserver,
        )
        .unwrap();
        assert!(t.terminal_theta[0] > 0.0);
        assert_eq!(t.gradient_evaluations(), 200);
        let r = &t.records[3];
        assert!((r.gamma - 0.1 / 4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nested_with_one_inner_step_differs_from_single_loop() {
        let pot = hex();
        let s = LangevinSampler::new(pot.clone(), 0.05);
        let est = RewardCovariance {
            potential: pot,
            reward: IndicatorGaussianReward::default(),
        };
        let p0 = InitialDistribution::standard_normal(50, 2);
        let rng = RngStream::new(5);
        let a = run_nested_loop(&THETA0, &p0, 1, 10, &s, &est, 0.5, &rng, &mut NoObserver).unwrap();
        let b = run_implicit_infinite(
            &THETA0,
            &p0,
            10,
            &s,
            &est,
            ThetaStep::Constant { eta: 0.5 },
            ImplicitOptions::default(),
            &rng,
            &mut NoObserver,
        )
        .unwrap();
        assert_ne!(a.terminal_theta, b.terminal_theta);
    }

    #[test]
    fn observer_can_stop_early() {
        let pot = QuadraticPotential::new(1);
        let s = LangevinSampler::new(pot, 0.1);
        let p0 = InitialDistribution::standard_normal(5, 1);
        let mut obs = |v: &super::super::StepView<'_>| {
            if v.k == 3 {
                std::ops::ControlFlow::Break(())
            } else {
                std::ops::ControlFlow::Continue(())
            }
        };
        let t = run_fixed_langevin(&[0.0], &p0, 10, &s, &RngStream::new(1), &mut obs).unwrap();
        assert_eq!(t.records.len(), 3);
        assert!(t.stopped_early);
    }

    #[test]
    fn guided_with_zero_lambda_is_plain_langevin() {
        let p0 = InitialDistribution::standard_normal(40, 2);
        let rng = RngStream::new(9);
        let a = run_guided_langevin(&THETA0, &p0, 30, hex(), SigmoidGaussianReward::default(), 0.0, 0.05, &rng, &mut NoObserver)
            .unwrap();
        let b = run_fixed_langevin(&THETA0, &p0, 30, &LangevinSampler::new(hex(), 0.05), &rng, &mut NoObserver).unwrap();
        assert_eq!(a.terminal_ensemble, b.terminal_ensemble);
    }

    #[test]
    fn unroll_with_zero_step_freezes_theta() {
        let p0 = InitialDistribution::standard_normal(20, 2);
        let t = run_unroll_last_step(
            &THETA0,
            &p0,
            5,
            4,
            &hex(),
            &SigmoidGaussianReward::default(),
            0.0,
            1.0,
            &RngStream::new(2),
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(t.terminal_theta, THETA0.to_vec());
        assert!(run_unroll_last_step(
            &THETA0,
            &p0,
            5,
            4,
            &hex(),
            &IndicatorGaussianReward::default(),
            0.05,
            1.0,
            &RngStream::new(2),
            &mut NoObserver
        )
        .is_err());
    }

    #[test]
    fn unroll_sign_matches_full_gradient_for_quadratic() {
        // ℓ = −E[x] under N(θ, 1): ∇ℓ = −1, so descent increases θ
        let pot = QuadraticPotential::new(1);
        let r = LinearReward::new(vec![1.0]);
        let t = run_unroll_last_step(
            &[0.0],
            &InitialDistribution::standard_normal(50, 1),
            10,
            5,
            &pot,
            &r,
            0.1,
            1.0,
            &RngStream::new(3),
            &mut NoObserver,
        )
        .unwrap();
        // one-step gradient: −γ_X E[R′] ∂θ(∇ₓV) = −0.1 · (−1) per step, so θ grows by 0.1·η
        assert!((t.terminal_theta[0] - 0.5).abs() < 1e-12, "{:?}", t.terminal_theta);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut a = AdamState::new(3);
        let d = a.direction(&[1e-4, -5.0, 0.0]);
        assert!((d[0] - 1.0).abs() < 1e-3 && (d[1] + 1.0).abs() < 1e-8 && d[2] == 0.0, "{d:?}");
        let d2 = a.direction(&[1e-4, -5.0, 0.0]);
        assert!((d2[1] + 1.0).abs() < 1e-8);
    }
}
