use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::potentials::log_sum_exp;
use crate::rng::RngStream;

type TableFn = dyn Fn(&[f64], &mut [f64], &mut [f64]) + Send + Sync;

/// Inner problem on `m` states: `π*(θ) = softmax(−V(θ))`, outer loss
/// `ℓ(θ) = Σₓ Rₓ π*(θ)ₓ`.
#[derive(Clone)]
pub struct FiniteStateProblem {
    m: usize,
    p: usize,
    /// Writes `V(θ)` (length m) and `∂V/∂θ` (row-major m × p).
    table: Arc<TableFn>,
    reward: Vec<f64>,
}

impl fmt::Debug for FiniteStateProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteStateProblem")
            .field("m", &self.m)
            .field("p", &self.p)
            .field("reward", &self.reward)
            .finish()
    }
}

impl FiniteStateProblem {
    pub fn new(
        m: usize,
        p: usize,
        table: impl Fn(&[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if m < 2 || p == 0 {
            return Err(Error::invalid("finite-state problem needs m >= 2 and p >= 1"));
        }
        check_dim("reward table", m, reward.len())?;
        Ok(Self {
            m,
            p,
            table: Arc::new(table),
            reward,
        })
    }

    /// `V = (θ, 0)`, `R = (1, 0)`: `ℓ(θ) = σ(−θ)`.
    pub fn two_state_logistic() -> Self {
        Self::new(
            2,
            1,
            |th, v, j| {
                v[0] = th[0];
                v[1] = 0.0;
                j[0] = 1.0;
                j[1] = 0.0;
            },
            vec![1.0, 0.0],
        )
        .expect("valid problem")
    }

    /// Random smooth table `Vₓ(θ) = Σⱼ aₓⱼθⱼ + bₓⱼ sin(cₓⱼθⱼ + dₓⱼ)` and
    /// rewards uniform on `[−1, 1]`.
    pub fn random_smooth(m: usize, p: usize, rng: &RngStream) -> Result<Self> {
        let mut r = rng.rng();
        let mut coef = Vec::with_capacity(m * p * 4);
        for _ in 0..m * p {
            coef.push(r.random_range(-1.0..1.0));
            coef.push(r.random_range(-1.0..1.0));
            coef.push(r.random_range(0.5..1.5));
            coef.push(r.random_range(0.0..std::f64::consts::TAU));
        }
        let reward = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        Self::new(
            m,
            p,
            move |th, v, jac| {
                for x in 0..m {
                    v[x] = 0.0;
                    for j in 0..p {
                        let c = &coef[(x * p + j) * 4..(x * p + j) * 4 + 4];
                        let arg = c[2] * th[j] + c[3];
                        v[x] += c[0] * th[j] + c[1] * arg.sin();
                        jac[x * p + j] = c[0] + c[1] * c[2] * arg.cos();
                    }
                }
            },
            reward,
        )
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn num_params(&self) -> usize {
        self.p
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn table(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("parameter", self.p, theta.len())?;
        let mut v = vec![0.0; self.m];
        let mut j = vec![0.0; self.m * self.p];
        (self.table)(theta, &mut v, &mut j);
        Ok((v, j))
    }

    /// `softmax(−V(θ))`.
    pub fn stationary(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (v, _) = self.table(theta)?;
        Ok(softmax_neg(&v))
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let p = self.stationary(theta)?;
        Ok(p.iter().zip(&self.reward).map(|(a, b)| a * b).sum())
    }

    /// Softmax-Jacobian gradient `−Σₓ Rₓ pₓ (∂ⱼVₓ − Σ_y p_y ∂ⱼV_y)`.
    pub fn closed_form_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (v, jac) = self.table(theta)?;
        let p = softmax_neg(&v);
        Ok((0..self.p)
            .map(|j| {
                let mean: f64 = (0..self.m).map(|x| p[x] * jac[x * self.p + j]).sum();
                -(0..self.m)
                    .map(|x| self.reward[x] * p[x] * (jac[x * self.p + j] - mean))
                    .sum::<f64>()
            })
            .collect())
    }
}

fn softmax_neg(v: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let lse = log_sum_exp(&neg);
    neg.iter().map(|x| (x - lse).exp()).collect()
}

/// `∇ℓ(θ)` by implicit differentiation of the entropic inner problem.
///
/// Solves the KKT system `[diag(1/p) 1; 1ᵀ 0] [γ; ν] = [−∂V/∂θ; 0]` for the
/// sensitivity `γ = ∂π*/∂θ` (all p columns at once) and contracts with the
/// first variation `R`.
pub fn finite_state_implicit_gradient(prob: &FiniteStateProblem, theta: &[f64]) -> Result<Vec<f64>> {
    let (v, jac) = prob.table(theta)?;
    let pi = softmax_neg(&v);
    let (m, p) = (prob.m, prob.p);
    for (x, px) in pi.iter().enumerate() {
        if !(*px >= f64::MIN_POSITIVE && (1.0 / px).is_finite()) {
            return Err(Error::SingularSystem { state: x });
        }
    }
    let mut k = DMatrix::<f64>::zeros(m + 1, m + 1);
    for x in 0..m {
        k[(x, x)] = 1.0 / pi[x];
        k[(x, m)] = 1.0;
        k[(m, x)] = 1.0;
    }
    let mut rhs = DMatrix::<f64>::zeros(m + 1, p);
    for x in 0..m {
        for j in 0..p {
            rhs[(x, j)] = -jac[x * p + j];
        }
    }
    let argmin = pi
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem { state: argmin })?;
    let r = DVector::from_column_slice(&prob.reward);
    let gamma = sol.rows(0, m);
    let grad = gamma.transpose() * r;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::SingularSystem { state: argmin });
    }
    Ok(grad.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_derivative_at_zero() {
        let prob = FiniteStateProblem::two_state_logistic();
        let g = finite_state_implicit_gradient(&prob, &[0.0]).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-15);
        let t = 1.3f64;
        let s = 1.0 / (1.0 + (-t).exp());
        let g = finite_state_implicit_gradient(&prob, &[t]).unwrap();
        assert!((g[0] + s * (1.0 - s)).abs() < 1e-14);
    }

    #[test]
    fn constant_reward_is_flat() {
        let base = FiniteStateProblem::random_smooth(5, 3, &RngStream::new(1)).unwrap();
        let prob = FiniteStateProblem { reward: vec![0.4; 5], ..base };
        let g = finite_state_implicit_gradient(&prob, &[0.1, -0.2, 0.3]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14), "{g:?}");
    }

    #[test]
    fn matches_closed_form_and_differences() {
        let prob = FiniteStateProblem::random_smooth(5, 3, &RngStream::new(2)).unwrap();
        let theta = [0.3, -1.1, 0.7];
        let g = finite_state_implicit_gradient(&prob, &theta).unwrap();
        let c = prob.closed_form_gradient(&theta).unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-8), "{g:?} {c:?}");
        }
        let h = 1e-5;
        for j in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            let fd = (prob.loss(&tp).unwrap() - prob.loss(&tm).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "{fd} {}", g[j]);
        }
    }

    #[test]
    fn vanishing_state_is_singular() {
        let prob = FiniteStateProblem::two_state_logistic();
        match finite_state_implicit_gradient(&prob, &[800.0]) {
            Err(Error::SingularSystem { state }) => assert_eq!(state, 0),
            other => panic!("{other:?}"),
        }
    }
}
