//! Parameterized potentials `V(x, θ)` and their Gibbs densities.

mod grid;
mod mixture;
mod quadratic;
mod tilted;

pub use grid::{stationary_quadrature, GridDistribution};
pub use mixture::{MixturePotential, WeightParam};
pub use quadratic::QuadraticPotential;
pub use tilted::TiltedPotential;

use crate::ensemble::ParamVector;
use crate::error::{check_dim, Error, Result};

/// A potential `V: ℝᵈ × ℝᵖ → ℝ` with analytic first derivatives.
///
/// The `*_into` methods do not check dimensions; the free functions of this
/// module do.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    fn value(&self, x: &[f64], theta: &[f64]) -> f64;

    /// `∇₁V(x, θ)` written to `out` (length d).
    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// `∇₂V(x, θ)` written to `out` (length p).
    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Mixed derivative `∂θ_j ∂x_a V`, row-major `p × d`.
    fn mixed_grad_into(&self, _x: &[f64], _theta: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::invalid("potential has no mixed second derivative"))
    }

    fn check(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        check_dim("state", self.dim(), x.len())?;
        check_dim("parameter", self.num_params(), theta.len())
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_params(&self) -> usize {
        (**self).num_params()
    }
    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        (**self).value(x, theta)
    }
    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).grad_x_into(x, theta, out)
    }
    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).grad_theta_into(x, theta, out)
    }
    fn mixed_grad_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mixed_grad_into(x, theta, out)
    }
}

impl<P: Potential + ?Sized> Potential for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_params(&self) -> usize {
        (**self).num_params()
    }
    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        (**self).value(x, theta)
    }
    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).grad_x_into(x, theta, out)
    }
    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (**self).grad_theta_into(x, theta, out)
    }
    fn mixed_grad_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mixed_grad_into(x, theta, out)
    }
}

pub fn potential_value<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &ParamVector) -> Result<f64> {
    pot.check(x, theta)?;
    Ok(pot.value(x, theta))
}

pub fn grad_x<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &ParamVector) -> Result<Vec<f64>> {
    pot.check(x, theta)?;
    let mut g = vec![0.0; pot.dim()];
    pot.grad_x_into(x, theta, &mut g);
    Ok(g)
}

pub fn grad_theta<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &ParamVector) -> Result<Vec<f64>> {
    pot.check(x, theta)?;
    let mut g = vec![0.0; pot.num_params()];
    pot.grad_theta_into(x, theta, &mut g);
    Ok(g)
}

/// `∂θ∂x V` as `p` rows of length `d`.
pub fn mixed_grad<P: Potential + ?Sized>(pot: &P, x: &[f64], theta: &ParamVector) -> Result<Vec<f64>> {
    pot.check(x, theta)?;
    let mut g = vec![0.0; pot.num_params() * pot.dim()];
    pot.mixed_grad_into(x, theta, &mut g)?;
    Ok(g)
}

/// `log π*(θ)[x] = −V(x, θ) − log Z`.
pub fn log_density<P: Potential + ?Sized>(
    pot: &P,
    theta: &ParamVector,
    x: &[f64],
    z: f64,
) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::invalid(format!("normalizer must be positive, got {z}")));
    }
    Ok(-potential_value(pot, x, theta)? - z.ln())
}

#[inline]
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_is_shift_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_density_rejects_bad_z() {
        let q = QuadraticPotential::new(1);
        let t = ParamVector::zeros(1);
        assert!(log_density(&q, &t, &[0.0], 0.0).is_err());
        assert!(log_density(&q, &t, &[0.0], -1.0).is_err());
        let v = log_density(&q, &t, &[0.0], (2.0 * std::f64::consts::PI).sqrt()).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn checked_functions_reject_mismatch() {
        let q = QuadraticPotential::new(2);
        let t = ParamVector::zeros(2);
        assert!(potential_value(&q, &[0.0], &t).is_err());
        assert!(grad_x(&q, &[0.0, 0.0], &ParamVector::zeros(1)).is_err());
    }
}
