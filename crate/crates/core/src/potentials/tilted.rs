use super::Potential;
use crate::error::{Error, Result};
use crate::estimators::Reward;

/// `V(x, θ) − λ R(x)`: the guidance baseline samples from this tilted law.
#[derive(Debug, Clone)]
pub struct TiltedPotential<P, R> {
    base: P,
    reward: R,
    lambda: f64,
}

impl<P: Potential, R: Reward> TiltedPotential<P, R> {
    pub fn new(base: P, reward: R, lambda: f64) -> Result<Self> {
        if !reward.is_differentiable() {
            return Err(Error::NotDifferentiable);
        }
        if !lambda.is_finite() {
            return Err(Error::invalid("guidance strength must be finite"));
        }
        Ok(Self {
            base,
            reward,
            lambda,
        })
    }
}

impl<P: Potential, R: Reward> Potential for TiltedPotential<P, R> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn num_params(&self) -> usize {
        self.base.num_params()
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.base.value(x, theta) - self.lambda * self.reward.eval(x)
    }

    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        self.base.grad_x_into(x, theta, out);
        if self.lambda != 0.0 {
            let mut g = vec![0.0; x.len()];
            // differentiability was checked at construction
            let _ = self.reward.grad_into(x, &mut g);
            for (o, gv) in out.iter_mut().zip(&g) {
                *o -= self.lambda * gv;
            }
        }
    }

    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        self.base.grad_theta_into(x, theta, out)
    }

    fn mixed_grad_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.base.mixed_grad_into(x, theta, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{IndicatorGaussianReward, LinearReward};
    use crate::potentials::QuadraticPotential;

    #[test]
    fn tilt_shifts_gradient() {
        let t = TiltedPotential::new(QuadraticPotential::new(1), LinearReward::new(vec![1.0]), 2.0).unwrap();
        let mut g = [0.0];
        t.grad_x_into(&[3.0], &[1.0], &mut g);
        assert_eq!(g, [0.0]);
        assert_eq!(t.value(&[1.0], &[1.0]), -2.0);
    }

    #[test]
    fn rejects_nondifferentiable_reward() {
        assert!(TiltedPotential::new(QuadraticPotential::new(2), IndicatorGaussianReward::default(), 1.0).is_err());
    }
}
