use std::sync::Arc;

use crate::ensemble::{ParticleEnsemble, WeightedPoints};
use crate::error::{check_dim, Error, Result};
use crate::potentials::Potential;

use super::Reward;

/// `ℓ = −λ E_p[R] + β KL(p_ref ‖ p)` evaluated at `p = π*(θ)`.
#[derive(Clone)]
pub struct ObjectiveSpec {
    pub lambda: f64,
    pub beta: f64,
    pub reward: Arc<dyn Reward>,
    pub reference: Option<ParticleEnsemble>,
}

impl std::fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("lambda", &self.lambda)
            .field("beta", &self.beta)
            .field("reference", &self.reference.as_ref().map(|r| r.len()))
            .finish()
    }
}

impl ObjectiveSpec {
    pub fn new(lambda: f64, beta: f64, reward: Arc<dyn Reward>, reference: Option<ParticleEnsemble>) -> Result<Self> {
        if lambda == 0.0 && beta == 0.0 {
            return Err(Error::invalid("objective needs lambda != 0 or beta != 0"));
        }
        if !(beta >= 0.0) || !lambda.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("objective needs finite lambda and beta >= 0"));
        }
        Ok(Self {
            lambda,
            beta,
            reward,
            reference,
        })
    }

    pub fn reward_only(reward: Arc<dyn Reward>) -> Self {
        Self {
            lambda: 1.0,
            beta: 0.0,
            reward,
            reference: None,
        }
    }
}

fn grad_table<W, P>(points: &W, theta: &[f64], pot: &P) -> Result<(Vec<f64>, Vec<f64>)>
where
    W: WeightedPoints + ?Sized,
    P: Potential + ?Sized,
{
    check_dim("points", pot.dim(), points.dim())?;
    check_dim("parameter", pot.num_params(), theta.len())?;
    let p = theta.len();
    let mut weights = Vec::with_capacity(points.num_points());
    let mut grads = Vec::with_capacity(points.num_points() * p);
    let mut g = vec![0.0; p];
    points.for_each_weighted(&mut |w, x| {
        pot.grad_theta_into(x, theta, &mut g);
        weights.push(w);
        grads.extend_from_slice(&g);
    });
    Ok((weights, grads))
}

/// `E[∇₂V(X, θ)]` under a weighted point set.
pub fn mean_grad_theta<W, P>(points: &W, theta: &[f64], pot: &P) -> Result<Vec<f64>>
where
    W: WeightedPoints + ?Sized,
    P: Potential + ?Sized,
{
    let (w, g) = grad_table(points, theta, pot)?;
    let p = theta.len();
    let mut m = vec![0.0; p];
    for (wi, gi) in w.iter().zip(g.chunks_exact(p.max(1))) {
        for (acc, v) in m.iter_mut().zip(gi) {
            *acc += wi * v;
        }
    }
    Ok(m)
}

/// `Γ_rew(p, θ) = cov_p[R(X), ∇₂V(X, θ)]` (population normalization).
///
/// This is a descent direction for `ℓ_rew = −E[R]`.
pub fn gamma_reward<W, P, R>(points: &W, theta: &[f64], pot: &P, reward: &R) -> Result<Vec<f64>>
where
    W: WeightedPoints + ?Sized,
    P: Potential + ?Sized,
    R: Reward + ?Sized,
{
    let p = theta.len();
    if points.num_points() == 1 {
        log::warn!("reward covariance of a single point is undefined; returning zero");
        return Ok(vec![0.0; p]);
    }
    let (w, g) = grad_table(points, theta, pot)?;
    let mut r = Vec::with_capacity(w.len());
    points.for_each_weighted(&mut |_, x| r.push(reward.eval(x)));
    let total: f64 = w.iter().sum();
    let r_mean = w.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / total;
    let mut g_mean = vec![0.0; p];
    for (wi, gi) in w.iter().zip(g.chunks_exact(p.max(1))) {
        for (acc, v) in g_mean.iter_mut().zip(gi) {
            *acc += wi * v;
        }
    }
    g_mean.iter_mut().for_each(|v| *v /= total);
    let mut cov = vec![0.0; p];
    for ((wi, ri), gi) in w.iter().zip(&r).zip(g.chunks_exact(p.max(1))) {
        let dr = ri - r_mean;
        for ((acc, v), m) in cov.iter_mut().zip(gi).zip(&g_mean) {
            *acc += wi * dr * (v - m);
        }
    }
    cov.iter_mut().for_each(|v| *v /= total);
    Ok(cov)
}

/// `Γ_ref(p, θ) = E_ref[∇₂V] − E_p[∇₂V]`, the contrastive direction for
/// `KL(p_ref ‖ π*(θ))`.
pub fn gamma_ref<W, Q, P>(points: &W, reference: &Q, theta: &[f64], pot: &P) -> Result<Vec<f64>>
where
    W: WeightedPoints + ?Sized,
    Q: WeightedPoints + ?Sized,
    P: Potential + ?Sized,
{
    check_dim("reference", points.dim(), reference.dim())?;
    let a = mean_grad_theta(reference, theta, pot)?;
    let b = mean_grad_theta(points, theta, pot)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// `λ Γ_rew + β Γ_ref`. The reference defaults to `obj.reference`.
pub fn gamma_combined<W, P>(
    points: &W,
    reference: Option<&dyn WeightedPoints>,
    theta: &[f64],
    pot: &P,
    obj: &ObjectiveSpec,
) -> Result<Vec<f64>>
where
    W: WeightedPoints + ?Sized,
    P: Potential + ?Sized,
{
    let p = theta.len();
    let mut out = vec![0.0; p];
    if obj.lambda != 0.0 {
        let g = gamma_reward(points, theta, pot, obj.reward.as_ref())?;
        for (o, v) in out.iter_mut().zip(&g) {
            *o += obj.lambda * v;
        }
    }
    if obj.beta != 0.0 {
        let g = match reference {
            Some(r) => gamma_ref(points, r, theta, pot)?,
            None => {
                let r = obj
                    .reference
                    .as_ref()
                    .ok_or_else(|| Error::invalid("beta != 0 needs reference samples"))?;
                gamma_ref(points, r, theta, pot)?
            }
        };
        for (o, v) in out.iter_mut().zip(&g) {
            *o += obj.beta * v;
        }
    }
    Ok(out)
}
