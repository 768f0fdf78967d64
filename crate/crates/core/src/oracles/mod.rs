//! Reference computations: quadrature losses, finite differences and closed
//! forms. Nothing here calls an estimator or a driver.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ParamVector, ParticleEnsemble};
use crate::error::{check_dim, Error, Result};
use crate::estimators::Reward;
use crate::potentials::{stationary_quadrature, GridDistribution, Potential};

/// Box and resolution of a quadrature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub pts_per_axis: usize,
    /// Re-evaluate at twice the resolution and fail if the result moves by
    /// more than `refine_tol`.
    pub refine_check: bool,
    pub refine_tol: f64,
}

impl GridSpec {
    /// `[−8, 8]` with 1601 nodes in 1D, `[−4, 4]²` with 401 per axis in 2D.
    pub fn default_for_dim(d: usize) -> Result<Self> {
        let (half, pts) = match d {
            1 => (8.0, 1601),
            2 => (4.0, 401),
            _ => return Err(Error::invalid(format!("quadrature grids support d <= 2, got d = {d}"))),
        };
        Ok(Self {
            lo: vec![-half; d],
            hi: vec![half; d],
            pts_per_axis: pts,
            refine_check: true,
            refine_tol: 1e-4,
        })
    }

    pub fn square(d: usize, half_width: f64, pts_per_axis: usize) -> Self {
        Self {
            lo: vec![-half_width; d],
            hi: vec![half_width; d],
            pts_per_axis,
            refine_check: false,
            refine_tol: 1e-4,
        }
    }

    pub fn without_refine_check(mut self) -> Self {
        self.refine_check = false;
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn density<P: Potential + ?Sized>(&self, pot: &P, theta: &ParamVector) -> Result<GridDistribution> {
        stationary_quadrature(pot, theta, &self.lo, &self.hi, self.pts_per_axis)
    }

    /// Tabulate an unnormalized log-density on this grid and normalize it.
    pub fn tabulate(&self, log_unnorm: &dyn Fn(&[f64]) -> f64) -> Result<GridDistribution> {
        let d = self.dim();
        let n = self.pts_per_axis.pow(d as u32);
        let mut x = vec![0.0; d];
        let mut vals = Vec::with_capacity(n);
        for idx in 0..n {
            self.node_into(idx, &mut x);
            vals.push(log_unnorm(&x));
        }
        GridDistribution::from_unnormalized(self.lo.clone(), self.hi.clone(), self.pts_per_axis, vals)
    }

    fn node_into(&self, mut idx: usize, out: &mut [f64]) {
        for a in (0..self.dim()).rev() {
            let i = idx % self.pts_per_axis;
            idx /= self.pts_per_axis;
            let h = (self.hi[a] - self.lo[a]) / self.pts_per_axis as f64;
            out[a] = self.lo[a] + (i as f64 + 0.5) * h;
        }
    }

    fn refined(&self) -> Self {
        Self {
            pts_per_axis: 2 * self.pts_per_axis - 1,
            refine_check: false,
            ..self.clone()
        }
    }
}

/// Loss terms for the quadrature oracle: `−λ ∫R dπ*(θ) + β KL(p_ref ‖ π*(θ))`.
///
/// `reference` is an unnormalized log-density, tabulated on the same grid as
/// `π*(θ)` whenever `beta > 0`.
#[derive(Clone, Copy)]
pub struct QuadratureObjective<'a> {
    pub lambda: f64,
    pub beta: f64,
    pub reward: &'a dyn Reward,
    pub reference: Option<&'a dyn Fn(&[f64]) -> f64>,
}

impl<'a> QuadratureObjective<'a> {
    pub fn reward_only(reward: &'a dyn Reward) -> Self {
        Self {
            lambda: 1.0,
            beta: 0.0,
            reward,
            reference: None,
        }
    }
}

/// `ℓ(θ)` on a quadrature grid, with an optional refinement self-check.
pub fn quadrature_loss<P: Potential + ?Sized>(
    pot: &P,
    theta: &ParamVector,
    objective: &QuadratureObjective<'_>,
    grid: &GridSpec,
) -> Result<f64> {
    let coarse = loss_on(pot, theta, objective, grid)?;
    if grid.refine_check {
        let fine = loss_on(pot, theta, objective, &grid.refined())?;
        let delta = (fine - coarse).abs();
        if delta > grid.refine_tol {
            return Err(Error::GridTooCoarse { delta });
        }
    }
    Ok(coarse)
}

fn loss_on<P: Potential + ?Sized>(
    pot: &P,
    theta: &ParamVector,
    obj: &QuadratureObjective<'_>,
    grid: &GridSpec,
) -> Result<f64> {
    check_dim("grid box", pot.dim(), grid.dim())?;
    let dens = grid.density(pot, theta)?;
    let mut loss = 0.0;
    if obj.lambda != 0.0 {
        loss -= obj.lambda * dens.expectation(|x| obj.reward.eval(x));
    }
    if obj.beta != 0.0 {
        let reference = obj
            .reference
            .ok_or_else(|| Error::invalid("beta > 0 needs a reference density"))?;
        loss += obj.beta * grid.tabulate(reference)?.kl_to(&dens)?;
    }
    if !loss.is_finite() {
        return Err(Error::invalid("quadrature loss is not finite"));
    }
    Ok(loss)
}

/// Central differences of `loss` at `theta`, one coordinate at a time.
pub fn finite_difference_grad<F>(loss: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        x[j] = theta[j] + h;
        let up = loss(&x)?;
        x[j] = theta[j] - h;
        let down = loss(&x)?;
        x[j] = theta[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss { coord: j });
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// [`finite_difference_grad`] at `h`, rejected unless the `h/2` estimate agrees
/// to `rel` in the Euclidean norm.
pub fn finite_difference_grad_checked<F>(loss: F, theta: &[f64], h: f64, rel: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let a = finite_difference_grad(&loss, theta, h)?;
    let b = finite_difference_grad(&loss, theta, h / 2.0)?;
    let diff = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if diff > rel * scale + 1e-10 {
        return Err(Error::invalid(format!(
            "finite differences at h and h/2 disagree: |Δ| = {diff:e}, |g| = {scale:e}"
        )));
    }
    Ok(a)
}

/// Exact moments after `s` steps of `X ← X − 2δ(X − θ) + √(2δ) B` from
/// `N(μ₀, σ₀²)`, in the closed form `θ + (1−2δ)^s(μ₀−θ)`, `1 + (1−2δ)^{2s}(σ₀²−1)`.
pub fn example1_moments(s: u32, delta: f64, theta: f64, mu0: f64, var0: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    let r = (1.0 - 2.0 * delta).powi(s as i32);
    Ok((theta + r * (mu0 - theta), 1.0 + r * r * (var0 - 1.0)))
}

/// Moments of the same recursion propagated step by step:
/// `μ ← (1−2δ)μ + 2δθ`, `σ² ← (1−2δ)²σ² + 2δ`.
pub fn example1_recursion_moments(s: u32, delta: f64, theta: f64, mu0: f64, var0: f64) -> (f64, f64) {
    let a = 1.0 - 2.0 * delta;
    (0..s).fold((mu0, var0), |(m, v), _| (a * m + 2.0 * delta * theta, a * a * v + 2.0 * delta))
}

type Mat2 = [[f64; 2]; 2];

fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// `exp(M)` for a real 2×2 matrix.
///
/// With `s = tr M / 2` and `q = s² − det M`, `exp(M) = e^s (c I + f (M − sI))`
/// where `(c, f) = (cosh √q, sinh √q / √q)`, their trigonometric versions for
/// `q < 0`, or a series near `q = 0` (repeated eigenvalue).
pub fn expm2(m: &Mat2) -> Mat2 {
    let s = 0.5 * (m[0][0] + m[1][1]);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let q = s * s - det;
    let (c, f) = if q.abs() < 1e-8 {
        (1.0 + q / 2.0 + q * q / 24.0, 1.0 + q / 6.0 + q * q / 120.0)
    } else if q > 0.0 {
        let r = q.sqrt();
        (r.cosh(), r.sinh() / r)
    } else {
        let r = (-q).sqrt();
        (r.cos(), r.sin() / r)
    };
    let e = s.exp();
    [
        [e * (c + f * (m[0][0] - s)), e * f * m[0][1]],
        [e * f * m[1][0], e * (c + f * (m[1][1] - s))],
    ]
}

/// Closed-form `(θ_t, ψ_t)` of the pipelined one-dimensional diffusion
/// finetuning dynamics: `θ_t = θ₀` on `[0, T]`, then `ξ̇ = Aξ + b` on
/// `[T, 2T]` with `A = [[0, −2η], [1, −2]]`, `b = (ηθ_target(1−e^{−2T}), −θ₀e^{−2T})`
/// and `ξ_T = (θ₀, θ₀(1−e^{−2T})/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledOdeSolution {
    pub theta0: f64,
    pub theta_target: f64,
    pub eta: f64,
    pub horizon: f64,
    pub a: Mat2,
    pub b: [f64; 2],
    pub xi_start: [f64; 2],
    /// `A⁻¹b`.
    pub a_inv_b: [f64; 2],
}

impl CoupledOdeSolution {
    /// `ξ_t`; times before `T` return `ξ_T`. Past `2T` the linear system is
    /// continued as is.
    pub fn xi(&self, t: f64) -> [f64; 2] {
        let tau = (t - self.horizon).max(0.0);
        let e = expm2(&self.a.map(|row| row.map(|v| v * tau)));
        let w = [self.a_inv_b[0] + self.xi_start[0], self.a_inv_b[1] + self.xi_start[1]];
        let ew = mat_vec(&e, w);
        [ew[0] - self.a_inv_b[0], ew[1] - self.a_inv_b[1]]
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.xi(t)[0]
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.xi(t)[1]
    }

    pub fn terminal_theta(&self) -> f64 {
        self.theta(2.0 * self.horizon)
    }

    /// `ξ̇ − (Aξ + b)` at `t` by central differences of the closed form.
    pub fn residual(&self, t: f64, h: f64) -> [f64; 2] {
        let (up, down) = (self.xi(t + h), self.xi(t - h));
        let rhs = mat_vec(&self.a, self.xi(t));
        [
            (up[0] - down[0]) / (2.0 * h) - rhs[0] - self.b[0],
            (up[1] - down[1]) / (2.0 * h) - rhs[1] - self.b[1],
        ]
    }

    /// Forward Euler on `ξ̇ = Aξ + b` from `ξ_T`, up to `t`.
    pub fn euler(&self, t: f64, step: f64) -> [f64; 2] {
        let n = ((t - self.horizon).max(0.0) / step).round() as usize;
        let h = (t - self.horizon).max(0.0) / n.max(1) as f64;
        let mut xi = self.xi_start;
        for _ in 0..n {
            let r = mat_vec(&self.a, xi);
            xi = [xi[0] + h * (r[0] + self.b[0]), xi[1] + h * (r[1] + self.b[1])];
        }
        xi
    }
}

pub fn diffusion1d_theta_path(theta0: f64, theta_target: f64, eta: f64, horizon: f64) -> Result<CoupledOdeSolution> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let decay = (-2.0 * horizon).exp();
    let a = [[0.0, -2.0 * eta], [1.0, -2.0]];
    let b = [eta * theta_target * (1.0 - decay), -theta0 * decay];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let a_inv_b = [
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (-a[1][0] * b[0] + a[0][0] * b[1]) / det,
    ];
    Ok(CoupledOdeSolution {
        theta0,
        theta_target,
        eta,
        horizon,
        a,
        b,
        xi_start: [theta0, theta0 * (1.0 - decay) / 2.0],
        a_inv_b,
    })
}

/// `∫₀ᵀ (2(θ₁−θ₂)e^{−(T−τ)})² dτ = 2(θ₁−θ₂)²(1−e^{−2T})`.
pub fn analytic_path_kl_1d(theta1: f64, theta2: f64, horizon: f64) -> f64 {
    let d = theta1 - theta2;
    2.0 * d * d * (1.0 - (-2.0 * horizon).exp())
}

/// Gaussian kernel density of `ens` on `grid`, one bandwidth per axis:
/// `std_a · n^{−1/6}`.
pub fn kde_on_grid(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<GridDistribution> {
    let d = grid.dim();
    check_dim("ensemble", d, ens.dim())?;
    if ens.len() < 2 {
        return Err(Error::invalid("kernel density needs at least two points"));
    }
    let factor = (ens.len() as f64).powf(-1.0 / 6.0);
    let bw: Vec<f64> = ens.variance().iter().map(|v| v.sqrt().max(1e-12) * factor).collect();
    let k = grid.pts_per_axis;
    let axis_nodes: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let h = (grid.hi[a] - grid.lo[a]) / k as f64;
            (0..k).map(|i| grid.lo[a] + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let mut dens = vec![0.0; k.pow(d as u32)];
    let mut kern = vec![vec![0.0; k]; d];
    for x in ens.points() {
        for a in 0..d {
            for (slot, node) in kern[a].iter_mut().zip(&axis_nodes[a]) {
                let u = (node - x[a]) / bw[a];
                *slot = (-0.5 * u * u).exp();
            }
        }
        if d == 1 {
            dens.iter_mut().zip(&kern[0]).for_each(|(acc, v)| *acc += v);
        } else {
            for (row, k0) in dens.chunks_exact_mut(k).zip(&kern[0]) {
                if *k0 == 0.0 {
                    continue;
                }
                row.iter_mut().zip(&kern[1]).for_each(|(acc, v)| *acc += k0 * v);
            }
        }
    }
    let logs = dens.into_iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    GridDistribution::from_unnormalized(grid.lo.clone(), grid.hi.clone(), k, logs)
}
