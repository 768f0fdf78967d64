//! Optimization through parameterized stochastic sampling.
//!
//! The crate treats an iterative sampler `p_{s+1} = Σ_s(p_s, θ)` as a map from
//! parameters to distributions and optimizes `ℓ(θ) = F(π*(θ))` with first-order
//! methods. The building blocks are:
//!
//! - [`ensemble`], [`schedule`], [`rng`]: particle ensembles, step-size
//!   schedules and counter-based random streams.
//! - [`potentials`]: parameterized Gibbs potentials `V(x, θ)` and a quadrature
//!   grid for their stationary densities.
//! - [`samplers`]: Langevin Monte Carlo and the 1D denoising diffusion.
//! - [`estimators`]: gradient estimators `Γ(p, θ)` (reward covariance,
//!   contrastive, adjoint, finite-state implicit differentiation).
//! - [`optimizers`]: nested-loop, single-loop and queued drivers plus baselines.
//! - [`oracles`]: closed-form and brute-force references used for verification.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod optimizers;
pub mod oracles;
pub mod potentials;
pub mod rng;
pub mod samplers;
pub mod schedule;

pub use ensemble::{gaussian_ensemble, ParamVector, ParticleEnsemble, WeightedPoints};
pub use error::{Error, Result};
pub use rng::{RngStream, StreamKey};
pub use schedule::{schedule_values, ScheduleKind, StepSchedule};
