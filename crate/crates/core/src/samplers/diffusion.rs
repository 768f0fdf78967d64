use serde::{Deserialize, Serialize};

use super::{guard, SamplingOperator, StepContext};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// A time-dependent parameterized drift `μ(t, y, θ)` on `[0, T]` with
/// analytic Jacobians, driving `dY = μ dt + σ dB`.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    fn horizon(&self) -> f64;

    /// Noise coefficient σ (0 for an ODE).
    fn noise_scale(&self) -> f64;

    fn drift_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);

    /// `∂μ_a/∂y_b` at `out[a * d + b]`.
    fn jac_y_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);

    /// `∂μ_a/∂θ_j` at `out[a * p + j]`.
    fn jac_theta_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);
}

impl<D: Drift + ?Sized> Drift for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_params(&self) -> usize {
        (**self).num_params()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn noise_scale(&self) -> f64 {
        (**self).noise_scale()
    }
    fn drift_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).drift_into(t, y, theta, out)
    }
    fn jac_y_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).jac_y_into(t, y, theta, out)
    }
    fn jac_theta_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).jac_theta_into(t, y, theta, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    /// `dY = {Y + 2 s_θ(Y, T − t)} dt + √2 dB`.
    Sde,
    /// `dY = {Y + s_θ(Y, T − t)} dt`.
    Ode,
}

/// Backward drift of the 1D model with score `s_θ(x, t) = −(x − θe^{−t})`.
///
/// The SDE drift is `−y + 2θe^{−(T−t)}` and the ODE drift reduces to
/// `θe^{−(T−t)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionDrift {
    pub horizon: f64,
    pub kind: DiffusionKind,
}

impl DiffusionDrift {
    pub fn sde(horizon: f64) -> Self {
        Self {
            horizon,
            kind: DiffusionKind::Sde,
        }
    }

    pub fn ode(horizon: f64) -> Self {
        Self {
            horizon,
            kind: DiffusionKind::Ode,
        }
    }
}

impl Drift for DiffusionDrift {
    fn dim(&self) -> usize {
        1
    }

    fn num_params(&self) -> usize {
        1
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn noise_scale(&self) -> f64 {
        match self.kind {
            DiffusionKind::Sde => std::f64::consts::SQRT_2,
            DiffusionKind::Ode => 0.0,
        }
    }

    fn drift_into(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]) {
        let decay = (-(self.horizon - t)).exp();
        out[0] = match self.kind {
            DiffusionKind::Sde => -y[0] + 2.0 * theta[0] * decay,
            DiffusionKind::Ode => theta[0] * decay,
        };
    }

    fn jac_y_into(&self, _t: f64, _y: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = match self.kind {
            DiffusionKind::Sde => -1.0,
            DiffusionKind::Ode => 0.0,
        };
    }

    fn jac_theta_into(&self, t: f64, _y: &[f64], _theta: &[f64], out: &mut [f64]) {
        let decay = (-(self.horizon - t)).exp();
        out[0] = match self.kind {
            DiffusionKind::Sde => 2.0 * decay,
            DiffusionKind::Ode => decay,
        };
    }
}

/// The 1D analytic denoising model: forward OU from `N(θ, 1)` data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diffusion1D {
    pub theta: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Diffusion1D {
    pub fn new(theta: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) || !theta.is_finite() {
            return Err(Error::invalid("diffusion model needs finite θ and T >= 0"));
        }
        if steps == 0 {
            return Err(Error::invalid("diffusion model needs at least one step"));
        }
        Ok(Self {
            theta,
            horizon,
            steps,
        })
    }

    pub fn score(&self, x: f64, t: f64) -> f64 {
        -(x - self.theta * (-t).exp())
    }

    /// Mean of the exact SDE output law `N(θ(1 − e^{−2T}), 1)`.
    pub fn sde_terminal_mean(&self) -> f64 {
        self.theta * (1.0 - (-2.0 * self.horizon).exp())
    }

    /// Mean of the exact ODE output, `θ(1 − e^{−T})`.
    pub fn ode_terminal_mean(&self) -> f64 {
        self.theta * (1.0 - (-self.horizon).exp())
    }
}

/// A sample path of an SDE, stored as the key of its noise stream.
///
/// The start point and all Brownian increments are read in order from
/// `noise_key`, so [`SdePath::replay`] regenerates the path bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdePath {
    pub noise_key: RngStream,
    pub steps: usize,
    pub horizon: f64,
    pub dim: usize,
}

impl SdePath {
    /// Path values `Y_{t_0}, …, Y_{t_steps}` (row-major, `(steps + 1) × d`)
    /// under `θ`, starting from a standard normal draw.
    pub fn replay<D: Drift + ?Sized>(&self, drift: &D, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("path dimension", drift.dim(), self.dim)?;
        check_dim("parameter", drift.num_params(), theta.len())?;
        if self.horizon != drift.horizon() {
            return Err(Error::invalid(format!(
                "path horizon {} differs from drift horizon {}",
                self.horizon,
                drift.horizon()
            )));
        }
        let d = self.dim;
        let h = self.horizon / self.steps as f64;
        let sig = drift.noise_scale() * h.sqrt();
        let mut rng = self.noise_key.rng();
        let mut values = vec![0.0; (self.steps + 1) * d];
        for v in values[..d].iter_mut() {
            *v = rng.normal();
        }
        let mut mu = vec![0.0; d];
        for j in 0..self.steps {
            let (done, rest) = values.split_at_mut((j + 1) * d);
            let y = &done[j * d..];
            drift.drift_into(j as f64 * h, y, theta, &mut mu);
            for a in 0..d {
                rest[a] = y[a] + h * mu[a] + sig * rng.normal();
            }
            guard(&rest[..d], self.noise_key.key.particle as usize, j as u64 + 1)?;
        }
        Ok(values)
    }

    pub fn terminal<D: Drift + ?Sized>(&self, drift: &D, theta: &[f64]) -> Result<Vec<f64>> {
        let v = self.replay(drift, theta)?;
        Ok(v[self.steps * self.dim..].to_vec())
    }
}

/// Euler–Maruyama for `n` paths from `Y_0 ~ N(0, I)`; path `i` uses the
/// stream of particle `i`.
pub fn integrate_sde<D: Drift + ?Sized>(
    drift: &D,
    theta: &[f64],
    n: usize,
    steps: usize,
    rng: &RngStream,
) -> Result<(ParticleEnsemble, Vec<SdePath>)> {
    if n == 0 || steps == 0 {
        return Err(Error::invalid("need n >= 1 and steps >= 1"));
    }
    let d = drift.dim();
    let mut paths = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let path = SdePath {
            noise_key: rng.with_particle(i as u64),
            steps,
            horizon: drift.horizon(),
            dim: d,
        };
        data.extend(path.terminal(drift, theta)?);
        paths.push(path);
    }
    Ok((ParticleEnsemble::new(d, data)?, paths))
}

/// Backward SDE sampler of the 1D model.
pub fn diffusion1d_backward_sde(
    model: &Diffusion1D,
    n: usize,
    rng: &RngStream,
) -> Result<(ParticleEnsemble, Vec<SdePath>)> {
    integrate_sde(&DiffusionDrift::sde(model.horizon), &[model.theta], n, model.steps, rng)
}

/// Euler integration of the backward ODE applied to `ens0`.
pub fn diffusion1d_backward_ode(model: &Diffusion1D, ens0: &ParticleEnsemble) -> Result<ParticleEnsemble> {
    check_dim("ensemble", 1, ens0.dim())?;
    let drift = DiffusionDrift::ode(model.horizon);
    let h = model.horizon / model.steps as f64;
    let theta = [model.theta];
    let mut mu = [0.0];
    let mut out = ens0.as_slice().to_vec();
    for y in out.iter_mut() {
        for j in 0..model.steps {
            drift.drift_into(j as f64 * h, std::slice::from_ref(y), &theta, &mut mu);
            *y += h * mu[0];
        }
    }
    ParticleEnsemble::new(1, out)
}

/// Euler–Maruyama step of the forward OU process `dX = −X dt + √2 dB`.
pub fn ou_forward_step(ens: &ParticleEnsemble, gamma: f64, rng: &RngStream) -> Result<ParticleEnsemble> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("step size must be nonnegative"));
    }
    if gamma == 0.0 {
        return Ok(ens.clone());
    }
    let d = ens.dim();
    let s = (2.0 * gamma).sqrt();
    let mut xi = vec![0.0; d];
    let mut out = Vec::with_capacity(ens.as_slice().len());
    for (i, x) in ens.points().enumerate() {
        rng.fill_particle_normal(i, false, &mut xi);
        out.extend(x.iter().zip(&xi).map(|(x, z)| x - gamma * x + s * z));
    }
    ParticleEnsemble::new(d, out)
}

/// Per-slot transition `Σ_m` for queued drivers.
///
/// Slot `m` integrates `substeps` Euler(–Maruyama) steps over
/// `[m·S·h, (m+1)·S·h]` with `h = T / (M·S)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSlotSampler {
    pub drift: DiffusionDrift,
    pub slots: usize,
    pub substeps: usize,
    pub antithetic: bool,
}

impl DiffusionSlotSampler {
    pub fn new(drift: DiffusionDrift, slots: usize, substeps: usize) -> Result<Self> {
        if slots == 0 || substeps == 0 {
            return Err(Error::invalid("slot sampler needs M >= 1 and substeps >= 1"));
        }
        Ok(Self {
            drift,
            slots,
            substeps,
            antithetic: false,
        })
    }

    pub fn fine_step(&self) -> f64 {
        self.drift.horizon / (self.slots * self.substeps) as f64
    }
}

impl SamplingOperator for DiffusionSlotSampler {
    fn dim(&self) -> usize {
        1
    }

    fn step(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: StepContext, rng: &RngStream) -> Result<ParticleEnsemble> {
        check_dim("ensemble", 1, ens.dim())?;
        check_dim("parameter", 1, theta.len())?;
        if ctx.slot >= self.slots {
            return Err(Error::invalid(format!("slot {} out of range for M = {}", ctx.slot, self.slots)));
        }
        let h = self.fine_step();
        let sig = self.drift.noise_scale() * h.sqrt();
        let t0 = (ctx.slot * self.substeps) as f64 * h;
        let mut xi = vec![0.0; self.substeps];
        let mut mu = [0.0];
        let mut out = Vec::with_capacity(ens.len());
        for (i, x) in ens.points().enumerate() {
            if sig != 0.0 {
                rng.fill_particle_normal(i, self.antithetic, &mut xi);
            }
            let mut y = x[0];
            for (s, z) in xi.iter().enumerate() {
                self.drift.drift_into(t0 + s as f64 * h, &[y], theta, &mut mu);
                y += h * mu[0] + sig * z;
            }
            guard(&[y], i, rng.key.step)?;
            out.push(y);
        }
        Ok(ParticleEnsemble::from_raw(1, out))
    }

    fn evaluations_per_step(&self) -> u64 {
        self.substeps as u64
    }

    fn nominal_step(&self) -> f64 {
        self.fine_step()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::gaussian_ensemble;

    #[test]
    fn zero_theta_keeps_standard_normal() {
        let m = Diffusion1D::new(0.0, 2.0, 200).unwrap();
        let n = 20_000;
        let (e, _) = diffusion1d_backward_sde(&m, n, &RngStream::new(1)).unwrap();
        assert!(e.mean()[0].abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn replay_reproduces_terminal_values() {
        let m = Diffusion1D::new(1.3, 1.0, 50).unwrap();
        let (e, paths) = diffusion1d_backward_sde(&m, 20, &RngStream::new(2)).unwrap();
        let drift = DiffusionDrift::sde(1.0);
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(p.terminal(&drift, &[1.3]).unwrap()[0].to_bits(), e.point(i)[0].to_bits());
            assert_eq!(p.replay(&drift, &[1.3]).unwrap().len(), 51);
        }
        assert!(paths[0].replay(&DiffusionDrift::sde(2.0), &[1.3]).is_err());
    }

    #[test]
    fn ode_keeps_zero_mean_and_converges() {
        let e0 = gaussian_ensemble(4000, 1, &[0.0], 1.0, &RngStream::new(3)).unwrap();
        let zero = diffusion1d_backward_ode(&Diffusion1D::new(0.0, 3.0, 64).unwrap(), &e0).unwrap();
        assert_eq!(zero, e0);
        let a = diffusion1d_backward_ode(&Diffusion1D::new(2.0, 3.0, 512).unwrap(), &e0).unwrap();
        let b = diffusion1d_backward_ode(&Diffusion1D::new(2.0, 3.0, 1024).unwrap(), &e0).unwrap();
        assert!((a.mean()[0] - b.mean()[0]).abs() < 0.01);
        // shift is θ(1 − e^{−T}) up to Euler error
        let shift = a.mean()[0] - e0.mean()[0];
        assert!((shift - 2.0 * (1.0 - (-3.0f64).exp())).abs() < 0.01, "{shift}");
    }

    #[test]
    fn ou_reaches_stationary_law() {
        let n = 10_000;
        let mut e = ParticleEnsemble::new(1, vec![5.0; n]).unwrap();
        let g = 0.01;
        for k in 0..1000u64 {
            e = ou_forward_step(&e, g, &RngStream::new(8).with_step(k)).unwrap();
        }
        assert!(e.mean()[0].abs() < 0.05);
        assert!((e.variance()[0] - 1.0).abs() < 0.05);
        assert_eq!(ou_forward_step(&e, 0.0, &RngStream::new(0)).unwrap(), e);
    }

    #[test]
    fn ou_preserves_standard_normal() {
        let n = 20_000;
        let mut e = gaussian_ensemble(n, 1, &[0.0], 1.0, &RngStream::new(5)).unwrap();
        for k in 0..100u64 {
            e = ou_forward_step(&e, 0.01, &RngStream::new(6).with_step(k)).unwrap();
        }
        let se = 1.0 / (n as f64).sqrt();
        assert!(e.mean()[0].abs() < 3.0 * se);
        assert!((e.variance()[0] - 1.0).abs() < 3.0 * 2f64.sqrt() * se + 0.01);
    }

    #[test]
    fn slot_chain_equals_full_integration_for_ode() {
        let drift = DiffusionDrift::ode(2.0);
        let s = DiffusionSlotSampler::new(drift, 8, 4).unwrap();
        let e0 = gaussian_ensemble(10, 1, &[0.0], 1.0, &RngStream::new(1)).unwrap();
        let mut e = e0.clone();
        for m in 0..8 {
            e = s.step(&e, &[1.5], StepContext::slot(m), &RngStream::new(0)).unwrap();
        }
        let full = diffusion1d_backward_ode(&Diffusion1D::new(1.5, 2.0, 32).unwrap(), &e0).unwrap();
        for (a, b) in e.as_slice().iter().zip(full.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.step(&e, &[1.5], StepContext::slot(8), &RngStream::new(0)).is_err());
    }
}
