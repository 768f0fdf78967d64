use super::{guard, SamplingOperator, StepContext};
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;
use crate::rng::RngStream;

/// One unadjusted Langevin step `X ← X − γ∇₁V(X, θ) + √(2γ) ξ` for every particle.
pub fn langevin_step<P: Potential + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &P,
    theta: &[f64],
    gamma: f64,
    rng: &RngStream,
) -> Result<ParticleEnsemble> {
    langevin_step_with(ens, pot, theta, gamma, false, rng)
}

/// [`langevin_step`] with optional antithetic pairing of the noise.
pub fn langevin_step_with<P: Potential + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &P,
    theta: &[f64],
    gamma: f64,
    antithetic: bool,
    rng: &RngStream,
) -> Result<ParticleEnsemble> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("step size must be nonnegative, got {gamma}")));
    }
    check_dim("ensemble", pot.dim(), ens.dim())?;
    check_dim("parameter", pot.num_params(), theta.len())?;
    if gamma == 0.0 {
        return Ok(ens.clone());
    }
    let d = ens.dim();
    let noise = (2.0 * gamma).sqrt();
    let mut grad = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut out = Vec::with_capacity(ens.as_slice().len());
    for (i, x) in ens.points().enumerate() {
        pot.grad_x_into(x, theta, &mut grad);
        rng.fill_particle_normal(i, antithetic, &mut xi);
        let start = out.len();
        out.extend(x.iter().zip(&grad).zip(&xi).map(|((x, g), z)| x - gamma * g + noise * z));
        guard(&out[start..], i, rng.key.step)?;
    }
    Ok(ParticleEnsemble::from_raw(d, out))
}

/// Langevin Monte Carlo on a fixed potential with step `γ_X`.
#[derive(Debug, Clone)]
pub struct LangevinSampler<P> {
    pub potential: P,
    pub gamma: f64,
    pub antithetic: bool,
}

impl<P: Potential> LangevinSampler<P> {
    pub fn new(potential: P, gamma: f64) -> Self {
        Self {
            potential,
            gamma,
            antithetic: false,
        }
    }
}

impl<P: Potential> SamplingOperator for LangevinSampler<P> {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn step(&self, ens: &ParticleEnsemble, theta: &[f64], ctx: StepContext, rng: &RngStream) -> Result<ParticleEnsemble> {
        let gamma = ctx.gamma.unwrap_or(self.gamma);
        langevin_step_with(ens, &self.potential, theta, gamma, self.antithetic, rng)
    }

    fn nominal_step(&self) -> f64 {
        self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::gaussian_ensemble;
    use crate::potentials::QuadraticPotential;

    #[test]
    fn zero_step_is_identity() {
        let e = gaussian_ensemble(10, 2, &[0.0, 1.0], 1.0, &RngStream::new(1)).unwrap();
        let out = langevin_step(&e, &QuadraticPotential::new(2), &[0.0, 0.0], 0.0, &RngStream::new(2)).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn ar1_recursion_for_quadratic() {
        // curvature 2, step δ: X ← (1 − 2δ)X + 2δθ + √(2δ)ξ
        let delta = 0.1;
        let pot = QuadraticPotential::with_curvature(1, 2.0).unwrap();
        let n = 100_000;
        let mut e = gaussian_ensemble(n, 1, &[3.0], 2.0, &RngStream::new(10)).unwrap();
        let (mut mu, mut var) = (3.0, 4.0);
        for s in 0..20u64 {
            e = langevin_step(&e, &pot, &[0.0], delta, &RngStream::new(10).with_step(s + 1)).unwrap();
            mu *= 1.0 - 2.0 * delta;
            var = (1.0 - 2.0 * delta) * (1.0 - 2.0 * delta) * var + 2.0 * delta;
        }
        let sd = var.sqrt();
        assert!((e.mean()[0] - mu).abs() < 4.0 * sd / (n as f64).sqrt());
        assert!((e.variance()[0] / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn divergence_is_reported() {
        let pot = QuadraticPotential::with_curvature(1, 1e12).unwrap();
        let e = ParticleEnsemble::new(1, vec![0.0, 10.0]).unwrap();
        let err = langevin_step(&e, &pot, &[0.0], 1.0, &RngStream::new(0).with_step(7)).unwrap_err();
        assert!(matches!(err, Error::Diverged { particle: 1, step: 7 }), "{err}");
    }

    #[test]
    fn independent_of_evaluation_order() {
        // particle i's draw depends only on its key, so a sub-ensemble moves identically
        let pot = QuadraticPotential::new(1);
        let e = gaussian_ensemble(6, 1, &[0.0], 1.0, &RngStream::new(3)).unwrap();
        let rng = RngStream::new(4).with_step(1);
        let full = langevin_step(&e, &pot, &[0.5], 0.1, &rng).unwrap();
        let first = ParticleEnsemble::new(1, e.as_slice()[..3].to_vec()).unwrap();
        let part = langevin_step(&first, &pot, &[0.5], 0.1, &rng).unwrap();
        assert_eq!(&full.as_slice()[..3], part.as_slice());
    }
}
