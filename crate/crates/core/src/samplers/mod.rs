//! Sampling operators `Σ_s(p, θ)`.
//!
//! Every operator moves each particle independently and reads particle `i`'s
//! noise from the stream keyed by `i` under the caller's `(slot, step)` key.

mod diffusion;
mod langevin;

pub use diffusion::{
    diffusion1d_backward_ode, diffusion1d_backward_sde, integrate_sde, ou_forward_step, Diffusion1D,
    DiffusionDrift, DiffusionKind, DiffusionSlotSampler, Drift, SdePath,
};
pub use langevin::{langevin_step, langevin_step_with, LangevinSampler};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Coordinates beyond this magnitude count as a diverged particle.
pub const DIVERGENCE_BOUND: f64 = 1e9;

/// Per-call information a driver passes to a sampling operator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepContext {
    /// Queue position `m` of the distribution being advanced (0 outside queues).
    pub slot: usize,
    /// Overrides the operator's own step size (two-timescale schedules).
    pub gamma: Option<f64>,
}

impl StepContext {
    pub fn slot(slot: usize) -> Self {
        Self { slot, gamma: None }
    }
}

/// One application of a parameterized sampling operator.
pub trait SamplingOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn step(
        &self,
        ens: &ParticleEnsemble,
        theta: &[f64],
        ctx: StepContext,
        rng: &RngStream,
    ) -> Result<ParticleEnsemble>;

    /// Sequential sampler steps performed by one call (gradient-evaluation cost).
    fn evaluations_per_step(&self) -> u64 {
        1
    }

    /// The operator's own step size, for bookkeeping.
    fn nominal_step(&self) -> f64 {
        f64::NAN
    }
}

impl<S: SamplingOperator + ?Sized> SamplingOperator for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn step(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: StepContext, rng: &RngStream) -> Result<ParticleEnsemble> {
        (**self).step(ens, theta, ctx, rng)
    }
    fn evaluations_per_step(&self) -> u64 {
        (**self).evaluations_per_step()
    }
    fn nominal_step(&self) -> f64 {
        (**self).nominal_step()
    }
}

impl<S: SamplingOperator + ?Sized> SamplingOperator for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn step(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: StepContext, rng: &RngStream) -> Result<ParticleEnsemble> {
        (**self).step(ens, theta, ctx, rng)
    }
    fn evaluations_per_step(&self) -> u64 {
        (**self).evaluations_per_step()
    }
    fn nominal_step(&self) -> f64 {
        (**self).nominal_step()
    }
}

pub(crate) fn guard(point: &[f64], particle: usize, step: u64) -> Result<()> {
    if point.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::Diverged { particle, step })
    }
}
