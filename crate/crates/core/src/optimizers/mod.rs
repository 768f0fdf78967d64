//! Optimization drivers: nested loop, single loop, queued variants and the
//! comparison baselines.
//!
//! Random streams are keyed as follows (below the caller's seed/experiment):
//! - draws from `p0` placed in queue position `m` use slot `INIT_SLOT − m`,
//!   step = the outer step at which the draw is first consumed;
//! - sampler transitions use slot `m` (queue position or inner step index),
//!   step `k`;
//! - estimator-side randomness uses slot [`ESTIMATOR_SLOT`], step `k`.

mod queue;
mod single_loop;

pub use queue::{run_double_queue_adjoint, run_implicit_finite_queue, run_queue_m_divides_t, QueueState};
pub use single_loop::{
    run_fixed_langevin, run_guided_langevin, run_implicit_infinite, run_nested_loop, run_unroll_last_step,
    AdamState, ImplicitOptions, ThetaStep,
};

use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::{gaussian_ensemble_with, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const INIT_SLOT: u64 = u64::MAX;
pub const ESTIMATOR_SLOT: u64 = u64::MAX / 2;

/// Stream for a `p0` draw placed at queue position `position`, first used at
/// outer step `draw`.
pub fn init_stream(rng: &RngStream, position: usize, draw: u64) -> RngStream {
    rng.with_slot(INIT_SLOT - position as u64).with_step(draw)
}

pub fn transition_stream(rng: &RngStream, slot: usize, k: u64) -> RngStream {
    rng.with_slot(slot as u64).with_step(k)
}

pub fn estimator_stream(rng: &RngStream, k: u64) -> RngStream {
    rng.with_slot(ESTIMATOR_SLOT).with_step(k)
}

/// The initial distribution `p0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDistribution {
    /// `n` draws from `N(mean, stddev² I)`.
    Gaussian {
        n: usize,
        mean: Vec<f64>,
        stddev: f64,
        antithetic: bool,
    },
    /// The same batch every time.
    Fixed(ParticleEnsemble),
}

impl InitialDistribution {
    pub fn standard_normal(n: usize, dim: usize) -> Self {
        Self::Gaussian {
            n,
            mean: vec![0.0; dim],
            stddev: 1.0,
            antithetic: false,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Fixed(e) => e.dim(),
        }
    }

    pub fn draw(&self, rng: &RngStream) -> Result<ParticleEnsemble> {
        match self {
            Self::Gaussian {
                n,
                mean,
                stddev,
                antithetic,
            } => gaussian_ensemble_with(*n, mean.len(), mean, *stddev, *antithetic, rng),
            Self::Fixed(e) => Ok(e.clone()),
        }
    }
}

/// One outer step of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Outer steps completed (1-based).
    pub k: u64,
    /// `θ_k` after the update, if this step was sampled for recording.
    pub theta: Option<Vec<f64>>,
    /// Sampling step size used at this step.
    pub gamma: f64,
    /// Timescale ratio used at this step (1 when not applicable).
    pub eps: f64,
    /// Step size applied to Γ.
    pub theta_step: f64,
    /// Euclidean norm of the Γ used (0 when θ was frozen).
    pub grad_norm: f64,
    /// Cumulative sampler steps over all particle batches.
    pub gradient_evaluations: u64,
    /// Cumulative sequential depth (parallel slots counted once).
    pub parallel_depth: u64,
    /// Elapsed wall time since the start of the run.
    pub wall_ms: f64,
}

impl PartialEq for StepRecord {
    // wall time is not part of the trajectory
    fn eq(&self, o: &Self) -> bool {
        self.k == o.k
            && self.theta == o.theta
            && self.gamma.to_bits() == o.gamma.to_bits()
            && self.eps.to_bits() == o.eps.to_bits()
            && self.theta_step.to_bits() == o.theta_step.to_bits()
            && self.grad_norm.to_bits() == o.grad_norm.to_bits()
            && self.gradient_evaluations == o.gradient_evaluations
            && self.parallel_depth == o.parallel_depth
    }
}

/// Output of a driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub theta0: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub terminal_theta: Vec<f64>,
    pub terminal_ensemble: Option<ParticleEnsemble>,
    /// True if an observer stopped the run before `K` steps.
    pub stopped_early: bool,
}

impl RunTrace {
    pub fn gradient_evaluations(&self) -> u64 {
        self.records.last().map_or(0, |r| r.gradient_evaluations)
    }

    pub fn parallel_depth(&self) -> u64 {
        self.records.last().map_or(0, |r| r.parallel_depth)
    }

    /// `θ_0, θ_1, …` from the recorded snapshots.
    pub fn theta_path(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.theta0.clone())
            .chain(self.records.iter().filter_map(|r| r.theta.clone()))
            .collect()
    }
}

/// What an observer sees after each outer step.
#[derive(Debug)]
pub struct StepView<'a> {
    pub k: u64,
    pub theta: &'a [f64],
    /// The driver's current output ensemble (`p_{k}` after the step).
    pub ensemble: &'a ParticleEnsemble,
    pub gradient_evaluations: u64,
    pub parallel_depth: u64,
}

/// Receives every step; returning `Break` ends the run.
pub trait Observer {
    fn on_step(&mut self, view: &StepView<'_>) -> ControlFlow<()>;

    /// Keep a θ snapshot every this many steps (0 keeps none but the last).
    fn theta_every(&self) -> u64 {
        1
    }
}

impl<F: FnMut(&StepView<'_>) -> ControlFlow<()>> Observer for F {
    fn on_step(&mut self, view: &StepView<'_>) -> ControlFlow<()> {
        self(view)
    }
}

/// Observer that records everything and never stops.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl Observer for NoObserver {
    fn on_step(&mut self, _view: &StepView<'_>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

pub(crate) struct Recorder<'o> {
    obs: &'o mut dyn Observer,
    start: Instant,
    trace: RunTrace,
    evals: u64,
    depth: u64,
}

pub(crate) struct StepInfo {
    pub gamma: f64,
    pub eps: f64,
    pub theta_step: f64,
    pub grad_norm: f64,
    pub evals: u64,
    pub depth: u64,
}

impl<'o> Recorder<'o> {
    pub fn new(obs: &'o mut dyn Observer, theta0: &[f64]) -> Self {
        Self {
            obs,
            start: Instant::now(),
            trace: RunTrace {
                theta0: theta0.to_vec(),
                records: Vec::new(),
                terminal_theta: theta0.to_vec(),
                terminal_ensemble: None,
                stopped_early: false,
            },
            evals: 0,
            depth: 0,
        }
    }

    /// Log step `k` (0-based) and ask the observer whether to go on.
    pub fn step(&mut self, k: u64, theta: &[f64], ens: &ParticleEnsemble, info: StepInfo, last: bool) -> ControlFlow<()> {
        self.evals += info.evals;
        self.depth += info.depth;
        let every = self.obs.theta_every();
        let keep = last || (every > 0 && (k + 1).is_multiple_of(every));
        self.trace.records.push(StepRecord {
            k: k + 1,
            theta: keep.then(|| theta.to_vec()),
            gamma: info.gamma,
            eps: info.eps,
            theta_step: info.theta_step,
            grad_norm: info.grad_norm,
            gradient_evaluations: self.evals,
            parallel_depth: self.depth,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        self.trace.terminal_theta = theta.to_vec();
        let flow = self.obs.on_step(&StepView {
            k: k + 1,
            theta,
            ensemble: ens,
            gradient_evaluations: self.evals,
            parallel_depth: self.depth,
        });
        if flow.is_break() && !last {
            self.trace.stopped_early = true;
            if let Some(r) = self.trace.records.last_mut() {
                r.theta.get_or_insert_with(|| theta.to_vec());
            }
        }
        flow
    }

    pub fn finish(mut self, ens: Option<ParticleEnsemble>) -> RunTrace {
        self.trace.terminal_ensemble = ens;
        self.trace
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn update_theta(theta: &[f64], step: f64, gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient estimate",
            expected: theta.len(),
            got: gamma.len(),
        });
    }
    let next: Vec<f64> = theta.iter().zip(gamma).map(|(t, g)| t - step * g).collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("parameter update is not finite"));
    }
    Ok(next)
}

pub(crate) fn require_steps(k: u64, what: &str) -> Result<()> {
    if k == 0 {
        Err(Error::invalid(format!("{what} must be at least 1")))
    } else {
        Ok(())
    }
}
