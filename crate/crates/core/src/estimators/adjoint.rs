use serde::{Deserialize, Serialize};

use super::Reward;
use crate::ensemble::ParticleEnsemble;
use crate::error::{check_dim, Error, Result};
use crate::samplers::{Drift, SdePath};

/// Time stepping for the backward adjoint integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointScheme {
    Euler,
    /// Explicit trapezoid (predictor–corrector).
    #[default]
    Heun,
}

struct Workspace {
    d: usize,
    p: usize,
    mu: Vec<f64>,
    jy: Vec<f64>,
    jt: Vec<f64>,
}

impl Workspace {
    fn new(d: usize, p: usize) -> Self {
        Self {
            d,
            p,
            mu: vec![0.0; d],
            jy: vec![0.0; d * d],
            jt: vec![0.0; d * p],
        }
    }

    /// Writes `(Aᵀ J_y, Aᵀ J_θ)` at `(t, y)`.
    fn sensitivities<D: Drift + ?Sized>(
        &mut self,
        drift: &D,
        t: f64,
        y: &[f64],
        theta: &[f64],
        a: &[f64],
        da: &mut [f64],
        dg: &mut [f64],
    ) {
        let (d, p) = (self.d, self.p);
        drift.jac_y_into(t, y, theta, &mut self.jy);
        drift.jac_theta_into(t, y, theta, &mut self.jt);
        for b in 0..d {
            da[b] = (0..d).map(|r| a[r] * self.jy[r * d + b]).sum();
        }
        for j in 0..p {
            dg[j] = (0..d).map(|r| a[r] * self.jt[r * p + j]).sum();
        }
    }
}

fn check_reward<R: Reward + ?Sized>(reward: &R) -> Result<()> {
    if reward.is_differentiable() {
        Ok(())
    } else {
        Err(Error::NotDifferentiable)
    }
}

/// `∇_θ E[R(Y_T)]` for the ODE `dY = μ(t, Y, θ) dt` by the adjoint method.
///
/// Each terminal sample is integrated backward with `s = T − t`:
/// `Z' = −μ(T−s, Z)`, `A' = Aᵀ ∂_y μ`, `G' = Aᵀ ∂_θ μ`, from
/// `Z₀ = Y_T`, `A₀ = ∇R(Y_T)`, `G₀ = 0`. Returns the batch mean of `G`.
pub fn adjoint_ode_gradient<D, R>(
    drift: &D,
    terminal: &ParticleEnsemble,
    theta: &[f64],
    reward: &R,
    steps: usize,
    scheme: AdjointScheme,
) -> Result<Vec<f64>>
where
    D: Drift + ?Sized,
    R: Reward + ?Sized,
{
    check_reward(reward)?;
    check_dim("terminal ensemble", drift.dim(), terminal.dim())?;
    check_dim("parameter", drift.num_params(), theta.len())?;
    let (d, p) = (drift.dim(), drift.num_params());
    let mut total = vec![0.0; p];
    if steps == 0 || drift.horizon() == 0.0 {
        return Ok(total);
    }
    let big_t = drift.horizon();
    let h = big_t / steps as f64;
    let mut ws = Workspace::new(d, p);
    let (mut z, mut a, mut g) = (vec![0.0; d], vec![0.0; d], vec![0.0; p]);
    let (mut da1, mut dg1) = (vec![0.0; d], vec![0.0; p]);
    let (mut da2, mut dg2) = (vec![0.0; d], vec![0.0; p]);
    let (mut z2, mut a2, mut mu1) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for y in terminal.points() {
        z.copy_from_slice(y);
        reward.grad_into(y, &mut a)?;
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..steps {
            let t = big_t - i as f64 * h;
            drift.drift_into(t, &z, theta, &mut mu1);
            ws.sensitivities(drift, t, &z, theta, &a, &mut da1, &mut dg1);
            match scheme {
                AdjointScheme::Euler => {
                    for b in 0..d {
                        z[b] -= h * mu1[b];
                        a[b] += h * da1[b];
                    }
                    for j in 0..p {
                        g[j] += h * dg1[j];
                    }
                }
                AdjointScheme::Heun => {
                    for b in 0..d {
                        z2[b] = z[b] - h * mu1[b];
                        a2[b] = a[b] + h * da1[b];
                    }
                    let t2 = big_t - (i + 1) as f64 * h;
                    drift.drift_into(t2, &z2, theta, &mut ws.mu);
                    let mu2 = ws.mu.clone();
                    ws.sensitivities(drift, t2, &z2, theta, &a2, &mut da2, &mut dg2);
                    for b in 0..d {
                        z[b] -= 0.5 * h * (mu1[b] + mu2[b]);
                        a[b] += 0.5 * h * (da1[b] + da2[b]);
                    }
                    for j in 0..p {
                        g[j] += 0.5 * h * (dg1[j] + dg2[j]);
                    }
                }
            }
        }
        for (acc, v) in total.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let n = terminal.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

/// Pathwise `∇_θ E[R(Y_T)]` for an SDE, integrating `A` and `G` backward
/// along each stored path (regenerated from its noise key).
pub fn adjoint_sde_gradient<D, R>(
    drift: &D,
    paths: &[SdePath],
    theta: &[f64],
    reward: &R,
    scheme: AdjointScheme,
) -> Result<Vec<f64>>
where
    D: Drift + ?Sized,
    R: Reward + ?Sized,
{
    check_reward(reward)?;
    if paths.is_empty() {
        return Err(Error::invalid("no paths to differentiate"));
    }
    let (d, p) = (drift.dim(), drift.num_params());
    let mut ws = Workspace::new(d, p);
    let mut total = vec![0.0; p];
    let (mut a, mut a2) = (vec![0.0; d], vec![0.0; d]);
    let (mut da1, mut dg1) = (vec![0.0; d], vec![0.0; p]);
    let (mut da2, mut dg2) = (vec![0.0; d], vec![0.0; p]);
    for path in paths {
        let ys = path.replay(drift, theta)?;
        let steps = path.steps;
        let h = path.horizon / steps as f64;
        reward.grad_into(&ys[steps * d..], &mut a)?;
        let mut g = vec![0.0; p];
        for j in (0..steps).rev() {
            let (t1, y1) = ((j + 1) as f64 * h, &ys[(j + 1) * d..(j + 2) * d]);
            ws.sensitivities(drift, t1, y1, theta, &a, &mut da1, &mut dg1);
            match scheme {
                AdjointScheme::Euler => {
                    for b in 0..d {
                        a[b] += h * da1[b];
                    }
                    for k in 0..p {
                        g[k] += h * dg1[k];
                    }
                }
                AdjointScheme::Heun => {
                    for b in 0..d {
                        a2[b] = a[b] + h * da1[b];
                    }
                    let (t0, y0) = (j as f64 * h, &ys[j * d..(j + 1) * d]);
                    ws.sensitivities(drift, t0, y0, theta, &a2, &mut da2, &mut dg2);
                    for b in 0..d {
                        a[b] += 0.5 * h * (da1[b] + da2[b]);
                    }
                    for k in 0..p {
                        g[k] += 0.5 * h * (dg1[k] + dg2[k]);
                    }
                }
            }
        }
        for (acc, v) in total.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let n = paths.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

/// `scale · E ∫₀ᵀ ‖μ(t, Y_t, θ_a) − μ(t, Y_t, θ_b)‖² dt` along paths drawn
/// under `θ_a`, accumulated as an extra coordinate during the replay (left
/// Riemann sum on the path grid).
pub fn girsanov_kl_accumulate<D: Drift + ?Sized>(
    drift: &D,
    theta_a: &[f64],
    theta_b: &[f64],
    paths: &[SdePath],
    scale: f64,
) -> Result<f64> {
    check_dim("parameter", drift.num_params(), theta_b.len())?;
    if paths.is_empty() {
        return Err(Error::invalid("no paths for the path KL"));
    }
    let d = drift.dim();
    let (mut ma, mut mb) = (vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for path in paths {
        let ys = path.replay(drift, theta_a)?;
        let h = path.horizon / path.steps as f64;
        let mut acc = 0.0;
        for j in 0..path.steps {
            let y = &ys[j * d..(j + 1) * d];
            let t = j as f64 * h;
            drift.drift_into(t, y, theta_a, &mut ma);
            drift.drift_into(t, y, theta_b, &mut mb);
            acc += h * ma.iter().zip(&mb).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
        total += acc;
    }
    Ok(scale * total / paths.len() as f64)
}

/// `(E_p X − θ_target)(1 − e^{−2T})`.
///
/// Half the gradient of `E(Y_T − θ_target)²`; the adjoint of
/// `R = −(x − θ_target)²` returns `−2×` this value.
pub fn gamma_diffusion1d(ens: &ParticleEnsemble, theta_target: f64, horizon: f64) -> Result<f64> {
    check_dim("ensemble", 1, ens.dim())?;
    Ok((ens.mean()[0] - theta_target) * (1.0 - (-2.0 * horizon).exp()))
}
