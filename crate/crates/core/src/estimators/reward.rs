use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A reward `R: ℝᵈ → ℝ` to be maximized.
pub trait Reward: Send + Sync {
    fn eval(&self, x: &[f64]) -> f64;

    fn is_differentiable(&self) -> bool {
        false
    }

    fn grad_into(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::NotDifferentiable)
    }
}

impl<R: Reward + ?Sized> Reward for &R {
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn is_differentiable(&self) -> bool {
        (**self).is_differentiable()
    }
    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).grad_into(x, out)
    }
}

impl<R: Reward + ?Sized> Reward for Arc<R> {
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn is_differentiable(&self) -> bool {
        (**self).is_differentiable()
    }
    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).grad_into(x, out)
    }
}

impl<R: Reward + ?Sized> Reward for Box<R> {
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn is_differentiable(&self) -> bool {
        (**self).is_differentiable()
    }
    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).grad_into(x, out)
    }
}

fn gauss_bump(x: &[f64], mu: &[f64]) -> f64 {
    (-x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

/// `R(x) = 1(x₁ > 0) exp(−‖x − μ‖²)`; not differentiable.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorGaussianReward {
    pub mu: Vec<f64>,
}

impl Default for IndicatorGaussianReward {
    fn default() -> Self {
        Self { mu: vec![1.0, 0.95] }
    }
}

impl Reward for IndicatorGaussianReward {
    fn eval(&self, x: &[f64]) -> f64 {
        if x[0] > 0.0 {
            gauss_bump(x, &self.mu)
        } else {
            0.0
        }
    }
}

/// Smoothed version with the indicator replaced by `sigmoid(x₁ / τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidGaussianReward {
    pub mu: Vec<f64>,
    pub tau: f64,
}

impl Default for SigmoidGaussianReward {
    fn default() -> Self {
        Self {
            mu: vec![1.0, 0.95],
            tau: 0.1,
        }
    }
}

impl SigmoidGaussianReward {
    pub fn new(mu: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("sigmoid temperature must be positive"));
        }
        Ok(Self { mu, tau })
    }

    fn gate(&self, x0: f64) -> (f64, f64) {
        let u = x0 / self.tau;
        let s = if u >= 0.0 {
            1.0 / (1.0 + (-u).exp())
        } else {
            let e = u.exp();
            e / (1.0 + e)
        };
        (s, s * (1.0 - s) / self.tau)
    }
}

impl Reward for SigmoidGaussianReward {
    fn eval(&self, x: &[f64]) -> f64 {
        self.gate(x[0]).0 * gauss_bump(x, &self.mu)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (s, ds) = self.gate(x[0]);
        let b = gauss_bump(x, &self.mu);
        for ((o, a), m) in out.iter_mut().zip(x).zip(&self.mu) {
            *o = -2.0 * (a - m) * s * b;
        }
        out[0] += ds * b;
        Ok(())
    }
}

/// `R(x) = ⟨w, x⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReward {
    pub w: Vec<f64>,
}

impl LinearReward {
    pub fn new(w: Vec<f64>) -> Self {
        Self { w }
    }
}

impl Reward for LinearReward {
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.w).map(|(a, b)| a * b).sum()
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_into(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.w);
        Ok(())
    }
}

/// `R(x) = −‖x − target‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegSquaredDistance {
    pub target: Vec<f64>,
}

impl NegSquaredDistance {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target }
    }
}

impl Reward for NegSquaredDistance {
    fn eval(&self, x: &[f64]) -> f64 {
        -x.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, a), b) in out.iter_mut().zip(x).zip(&self.target) {
            *o = -2.0 * (a - b);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantReward(pub f64);

impl Reward for ConstantReward {
    fn eval(&self, _x: &[f64]) -> f64 {
        self.0
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_into(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Reward assembled from closures.
#[derive(Clone)]
pub struct RewardSpec {
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

impl RewardSpec {
    pub fn new(eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            grad: None,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }
}

impl fmt::Debug for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardSpec")
            .field("differentiable", &self.grad.is_some())
            .finish()
    }
}

impl Reward for RewardSpec {
    fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    fn is_differentiable(&self) -> bool {
        self.grad.is_some()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.grad {
            Some(g) => {
                g(x, out);
                Ok(())
            }
            None => Err(Error::NotDifferentiable),
        }
    }
}
