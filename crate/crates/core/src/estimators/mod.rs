//! Implicit gradient estimators `Γ(p, θ)`.
//!
//! Every `Γ` returned here is a descent direction for the outer loss: drivers
//! update `θ ← θ − η Γ`. For reward objectives the loss is `ℓ = −E[R]`.

mod adjoint;
mod covariance;
mod finite_state;
mod reward;

pub use adjoint::{
    adjoint_ode_gradient, adjoint_sde_gradient, gamma_diffusion1d, girsanov_kl_accumulate, AdjointScheme,
};
pub use covariance::{gamma_combined, gamma_ref, gamma_reward, mean_grad_theta, ObjectiveSpec};
pub use finite_state::{finite_state_implicit_gradient, FiniteStateProblem};
pub use reward::{
    ConstantReward, IndicatorGaussianReward, LinearReward, NegSquaredDistance, Reward, RewardSpec,
    SigmoidGaussianReward,
};

use crate::ensemble::ParticleEnsemble;
use crate::error::Result;
use crate::potentials::{GridDistribution, Potential};
use crate::rng::RngStream;
use crate::samplers::Drift;

/// What a driver knows when it asks for a gradient.
#[derive(Debug, Clone, Copy)]
pub struct EstimateContext {
    /// Outer step index.
    pub k: u64,
    /// Stream reserved for estimator-side randomness at this step.
    pub rng: RngStream,
}

/// `Γ(p̂, θ)` as used by the drivers.
pub trait GradientEstimator: Send + Sync {
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: &EstimateContext) -> Result<Vec<f64>>;
}

impl<F> GradientEstimator for F
where
    F: Fn(&ParticleEnsemble, &[f64], &EstimateContext) -> Result<Vec<f64>> + Send + Sync,
{
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: &EstimateContext) -> Result<Vec<f64>> {
        self(ens, theta, ctx)
    }
}

/// Always zero: decouples θ from the sampler.
#[derive(Debug, Clone, Copy)]
pub struct ZeroEstimator {
    pub num_params: usize,
}

impl GradientEstimator for ZeroEstimator {
    fn estimate(&self, _ens: &ParticleEnsemble, _theta: &[f64], _ctx: &EstimateContext) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.num_params])
    }
}

/// [`gamma_reward`] on the driver's ensemble.
#[derive(Debug, Clone)]
pub struct RewardCovariance<P, R> {
    pub potential: P,
    pub reward: R,
}

impl<P: Potential, R: Reward> GradientEstimator for RewardCovariance<P, R> {
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], _ctx: &EstimateContext) -> Result<Vec<f64>> {
        gamma_reward(ens, theta, &self.potential, &self.reward)
    }
}

/// Where [`Contrastive`] takes its reference samples from.
#[derive(Debug, Clone)]
pub enum ReferenceSource {
    Fixed(ParticleEnsemble),
    /// A fresh batch of `n` inverse-CDF draws from the grid at every step.
    Grid { grid: GridDistribution, n: usize },
}

/// [`gamma_ref`] against reference samples.
#[derive(Debug, Clone)]
pub struct Contrastive<P> {
    pub potential: P,
    pub reference: ReferenceSource,
}

impl<P: Potential> GradientEstimator for Contrastive<P> {
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: &EstimateContext) -> Result<Vec<f64>> {
        match &self.reference {
            ReferenceSource::Fixed(r) => gamma_ref(ens, r, theta, &self.potential),
            ReferenceSource::Grid { grid, n } => {
                let r = grid.sample(*n, &ctx.rng)?;
                gamma_ref(ens, &r, theta, &self.potential)
            }
        }
    }
}

/// [`gamma_combined`] with the objective's own reference batch.
#[derive(Debug, Clone)]
pub struct Combined<P> {
    pub potential: P,
    pub objective: ObjectiveSpec,
}

impl<P: Potential> GradientEstimator for Combined<P> {
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], _ctx: &EstimateContext) -> Result<Vec<f64>> {
        gamma_combined(ens, None, theta, &self.potential, &self.objective)
    }
}

/// [`gamma_diffusion1d`] as a one-parameter estimator.
#[derive(Debug, Clone, Copy)]
pub struct Diffusion1dClosedForm {
    pub theta_target: f64,
    pub horizon: f64,
}

impl GradientEstimator for Diffusion1dClosedForm {
    fn estimate(&self, ens: &ParticleEnsemble, _theta: &[f64], _ctx: &EstimateContext) -> Result<Vec<f64>> {
        Ok(vec![gamma_diffusion1d(ens, self.theta_target, self.horizon)?])
    }
}

/// Adjoint ODE gradient of `E[R(Y_T)]`, negated so it descends `ℓ = −E[R]`.
#[derive(Debug, Clone)]
pub struct AdjointOde<D, R> {
    pub drift: D,
    pub reward: R,
    pub steps: usize,
    pub scheme: AdjointScheme,
}

impl<D: Drift, R: Reward> GradientEstimator for AdjointOde<D, R> {
    fn estimate(&self, ens: &ParticleEnsemble, theta: &[f64], _ctx: &EstimateContext) -> Result<Vec<f64>> {
        let g = adjoint_ode_gradient(&self.drift, ens, theta, &self.reward, self.steps, self.scheme)?;
        Ok(g.into_iter().map(|v| -v).collect())
    }
}
