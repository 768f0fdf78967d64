use serde::{Deserialize, Serialize};

use super::Potential;
use crate::error::{Error, Result};

/// `V(x, θ) = (c/2)‖x − θ‖²` with `θ ∈ ℝᵈ`.
///
/// With the default curvature `c = 1` the Gibbs law is `N(θ, I)`. Setting
/// `c = 2` and Langevin step `γ = δ` gives the update
/// `X ← X − 2δ(X − θ) + √(2δ)ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPotential {
    dim: usize,
    curvature: f64,
}

impl QuadraticPotential {
    pub fn new(dim: usize) -> Self {
        Self { dim, curvature: 1.0 }
    }

    pub fn with_curvature(dim: usize, curvature: f64) -> Result<Self> {
        if dim == 0 || !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::invalid("quadratic potential needs d > 0 and curvature > 0"));
        }
        Ok(Self { dim, curvature })
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_params(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        0.5 * self.curvature * x.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(theta) {
            *o = self.curvature * (a - b);
        }
    }

    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(theta) {
            *o = self.curvature * (b - a);
        }
    }

    fn mixed_grad_into(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.dim {
            out[j * self.dim + j] = -self.curvature;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{grad_theta, grad_x, potential_value};
    use crate::ParamVector;

    #[test]
    fn closed_forms() {
        let q = QuadraticPotential::new(1);
        let t = ParamVector::new(vec![1.0]).unwrap();
        assert_eq!(potential_value(&q, &[1.0], &t).unwrap(), 0.0);
        assert_eq!(grad_x(&q, &[3.0], &t).unwrap(), vec![2.0]);
        assert_eq!(grad_theta(&q, &[3.0], &t).unwrap(), vec![-2.0]);
    }

    #[test]
    fn curvature_scales() {
        let q = QuadraticPotential::with_curvature(1, 2.0).unwrap();
        let mut g = [0.0];
        q.grad_x_into(&[3.0], &[1.0], &mut g);
        assert_eq!(g, [4.0]);
        assert!(QuadraticPotential::with_curvature(1, 0.0).is_err());
    }
}
