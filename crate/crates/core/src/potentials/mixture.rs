use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::{log_sum_exp, Potential};
use crate::error::{check_dim, Error, Result};

type Buf = SmallVec<[f64; 8]>;

/// How θ maps to the (unnormalized) mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightParam {
    /// `w = softmax(θ)`.
    Softmax,
    /// `w_i = H(θ_i) = η + (1 − η) σ(θ_i)`, each weight in `(η, 1)`.
    ShiftedLogistic { eta: f64 },
}

/// Gaussian-bump mixture `V(x, θ) = −log Σᵢ wᵢ(θ) exp(−‖x − zᵢ‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePotential {
    dim: usize,
    centers: Vec<Vec<f64>>,
    weights: WeightParam,
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl MixturePotential {
    pub fn new(centers: Vec<Vec<f64>>, weights: WeightParam) -> Result<Self> {
        let dim = centers
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("mixture needs at least one center"))?;
        if dim == 0 {
            return Err(Error::invalid("mixture centers must have positive dimension"));
        }
        for c in &centers {
            check_dim("mixture center", dim, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mixture center is not finite"));
            }
        }
        if let WeightParam::ShiftedLogistic { eta } = weights {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
            }
        }
        Ok(Self {
            dim,
            centers,
            weights,
        })
    }

    /// Six centers on a circle of `radius`, the first at angle 0.
    pub fn hexagon(radius: f64, weights: WeightParam) -> Result<Self> {
        Self::new(hexagon_centers(radius), weights)
    }

    /// Hexagon plus a seventh center at the origin.
    pub fn hexagon_with_origin(radius: f64, weights: WeightParam) -> Result<Self> {
        let mut c = hexagon_centers(radius);
        c.push(vec![0.0, 0.0]);
        Self::new(c, weights)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weight_param(&self) -> WeightParam {
        self.weights
    }

    /// `log wᵢ(θ)` and, for each i, `c_i = ∂ log wᵢ / ∂θᵢ` on the diagonal part.
    fn log_weights(&self, theta: &[f64], logw: &mut Buf, diag: &mut Buf) {
        match self.weights {
            WeightParam::Softmax => {
                let lse = log_sum_exp(theta);
                logw.extend(theta.iter().map(|t| t - lse));
                diag.extend(theta.iter().map(|_| 1.0));
            }
            WeightParam::ShiftedLogistic { eta } => {
                for &t in theta {
                    let s = sigmoid(t);
                    let h = eta + (1.0 - eta) * s;
                    logw.push(h.ln());
                    diag.push((1.0 - eta) * s * (1.0 - s) / h);
                }
            }
        }
    }

    /// Responsibilities `rᵢ ∝ wᵢ exp(−‖x − zᵢ‖²)`; returns `V` as well.
    fn responsibilities(&self, x: &[f64], theta: &[f64], r: &mut Buf, diag: &mut Buf) -> f64 {
        let mut logw = Buf::new();
        self.log_weights(theta, &mut logw, diag);
        for (lw, z) in logw.iter().zip(&self.centers) {
            let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            r.push(lw - d2);
        }
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        -lse
    }

    /// Mixture weights `w(θ)` (normalized only for softmax).
    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let mut logw = Buf::new();
        let mut diag = Buf::new();
        self.log_weights(theta, &mut logw, &mut diag);
        logw.iter().map(|v| v.exp()).collect()
    }
}

fn hexagon_centers(radius: f64) -> Vec<Vec<f64>> {
    (0..6)
        .map(|i| {
            let a = i as f64 * std::f64::consts::PI / 3.0;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

impl Potential for MixturePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_params(&self) -> usize {
        self.centers.len()
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        let mut r = Buf::new();
        let mut diag = Buf::new();
        self.responsibilities(x, theta, &mut r, &mut diag)
    }

    fn grad_x_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut r = Buf::new();
        let mut diag = Buf::new();
        self.responsibilities(x, theta, &mut r, &mut diag);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (ri, z) in r.iter().zip(&self.centers) {
            for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
                *o += 2.0 * ri * (a - b);
            }
        }
    }

    fn grad_theta_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let mut r = Buf::new();
        let mut diag = Buf::new();
        self.responsibilities(x, theta, &mut r, &mut diag);
        match self.weights {
            WeightParam::Softmax => {
                let lse = log_sum_exp(theta);
                for ((o, ri), t) in out.iter_mut().zip(&r).zip(theta) {
                    *o = (t - lse).exp() - ri;
                }
            }
            WeightParam::ShiftedLogistic { .. } => {
                for ((o, ri), g) in out.iter_mut().zip(&r).zip(&diag) {
                    *o = -ri * g;
                }
            }
        }
    }

    // ∂θ_j ∇ₓV_a = 2 c_j r_j (z̄_a − z_ja) with z̄ = Σ rᵢ zᵢ.
    fn mixed_grad_into(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        let mut r = Buf::new();
        let mut diag = Buf::new();
        self.responsibilities(x, theta, &mut r, &mut diag);
        let d = self.dim;
        let mut zbar: Buf = SmallVec::from_elem(0.0, d);
        for (ri, z) in r.iter().zip(&self.centers) {
            for (acc, zv) in zbar.iter_mut().zip(z) {
                *acc += ri * zv;
            }
        }
        for (j, z) in self.centers.iter().enumerate() {
            let scale = 2.0 * diag[j] * r[j];
            for a in 0..d {
                out[j * d + a] = scale * (zbar[a] - z[a]);
            }
        }
        Ok(())
    }
}
