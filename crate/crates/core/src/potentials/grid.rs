use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, Potential};
use crate::ensemble::{ParamVector, ParticleEnsemble, WeightedPoints};
use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Density tabulated at the cell midpoints of a uniform grid on a box.
///
/// Nodes are ordered with the first axis slowest. `log_density` holds
/// `log p` at each node, so the midpoint-rule mass is
/// `Σ exp(log_density) · cell_volume`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDistribution {
    lo: Vec<f64>,
    hi: Vec<f64>,
    pts_per_axis: usize,
    log_density: Vec<f64>,
    normalized: bool,
    log_z: f64,
}

impl GridDistribution {
    /// Normalize unnormalized log-weights given at the grid nodes.
    pub fn from_unnormalized(lo: Vec<f64>, hi: Vec<f64>, pts_per_axis: usize, log_unnorm: Vec<f64>) -> Result<Self> {
        validate_box(&lo, &hi, pts_per_axis)?;
        check_dim("grid values", pts_per_axis.pow(lo.len() as u32), log_unnorm.len())?;
        if log_unnorm.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::invalid("grid log-density has NaN or +inf"));
        }
        let vol = cell_volume(&lo, &hi, pts_per_axis);
        let log_z = log_sum_exp(&log_unnorm) + vol.ln();
        if !log_z.is_finite() {
            return Err(Error::invalid("grid density has no mass"));
        }
        let log_density = log_unnorm.into_iter().map(|v| v - log_z).collect();
        Ok(Self {
            lo,
            hi,
            pts_per_axis,
            log_density,
            normalized: true,
            log_z,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn pts_per_axis(&self) -> usize {
        self.pts_per_axis
    }

    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Log of the normalizer `Z` that was divided out.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn cell_volume(&self) -> f64 {
        cell_volume(&self.lo, &self.hi, self.pts_per_axis)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.pts_per_axis as f64
    }

    /// Midpoint of cell `idx`, written to `out`.
    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        let d = self.dim();
        let mut rem = idx;
        for a in (0..d).rev() {
            let i = rem % self.pts_per_axis;
            rem /= self.pts_per_axis;
            out[a] = self.lo[a] + (i as f64 + 0.5) * self.spacing(a);
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(idx, &mut x);
        x
    }

    /// Midpoint-rule total mass.
    pub fn mass(&self) -> f64 {
        let vol = self.cell_volume();
        self.log_density.iter().map(|v| v.exp() * vol).sum()
    }

    /// Mass in the outermost layer of cells; small values mean the box holds
    /// the distribution.
    pub fn boundary_mass(&self) -> f64 {
        let d = self.dim();
        let n = self.pts_per_axis;
        let vol = self.cell_volume();
        let mut total = 0.0;
        for (idx, lv) in self.log_density.iter().enumerate() {
            let mut rem = idx;
            let mut edge = false;
            for _ in 0..d {
                let i = rem % n;
                rem /= n;
                edge |= i == 0 || i == n - 1;
            }
            if edge {
                total += lv.exp() * vol;
            }
        }
        total
    }

    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_weighted(&mut |w, x| acc += w * f(x));
        acc
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        self.for_each_weighted(&mut |w, x| {
            for (acc, v) in m.iter_mut().zip(x) {
                *acc += w * v;
            }
        });
        m
    }

    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut var = vec![0.0; self.dim()];
        self.for_each_weighted(&mut |w, x| {
            for ((acc, v), mu) in var.iter_mut().zip(x).zip(&m) {
                *acc += w * (v - mu) * (v - mu);
            }
        });
        var
    }

    /// `KL(self ‖ other)` by the midpoint rule; both must share a grid.
    pub fn kl_to(&self, other: &GridDistribution) -> Result<f64> {
        if self.lo != other.lo || self.hi != other.hi || self.pts_per_axis != other.pts_per_axis {
            return Err(Error::invalid("KL between densities on different grids"));
        }
        let vol = self.cell_volume();
        let mut kl = 0.0;
        for (a, b) in self.log_density.iter().zip(&other.log_density) {
            let pa = a.exp();
            if pa > 0.0 {
                kl += pa * vol * (a - b);
            }
        }
        Ok(kl)
    }

    /// Draw `n` points: pick a cell by inverse CDF on the cell masses, then a
    /// uniform position inside it. Particle `i` uses the stream keyed by `i`.
    pub fn sample(&self, n: usize, rng: &RngStream) -> Result<ParticleEnsemble> {
        if n == 0 {
            return Err(Error::invalid("cannot draw an empty sample"));
        }
        let d = self.dim();
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for lv in &self.log_density {
            acc += lv.exp();
            cdf.push(acc);
        }
        let mut data = vec![0.0; n * d];
        for (i, pt) in data.chunks_exact_mut(d).enumerate() {
            let mut r = rng.with_particle(i as u64).rng();
            let u: f64 = r.random::<f64>() * acc;
            let idx = cdf.partition_point(|c| *c <= u).min(self.len() - 1);
            self.node_into(idx, pt);
            for (a, v) in pt.iter_mut().enumerate() {
                *v += (r.random::<f64>() - 0.5) * self.spacing(a);
            }
        }
        ParticleEnsemble::new(d, data)
    }
}

impl WeightedPoints for GridDistribution {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn num_points(&self) -> usize {
        self.len()
    }

    fn for_each_weighted(&self, f: &mut dyn FnMut(f64, &[f64])) {
        let vol = self.cell_volume();
        let mut x = vec![0.0; self.dim()];
        for (idx, lv) in self.log_density.iter().enumerate() {
            self.node_into(idx, &mut x);
            f(lv.exp() * vol, &x);
        }
    }
}

fn validate_box(lo: &[f64], hi: &[f64], pts: usize) -> Result<()> {
    check_dim("grid upper bound", lo.len(), hi.len())?;
    if lo.is_empty() {
        return Err(Error::invalid("grid needs at least one axis"));
    }
    if lo.len() > 2 {
        return Err(Error::invalid(format!(
            "quadrature grids support d <= 2, got d = {}",
            lo.len()
        )));
    }
    if pts == 0 {
        return Err(Error::invalid("grid needs at least one point per axis"));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::invalid("grid box must satisfy lo < hi on every axis"));
    }
    Ok(())
}

fn cell_volume(lo: &[f64], hi: &[f64], pts: usize) -> f64 {
    lo.iter().zip(hi).map(|(a, b)| (b - a) / pts as f64).product()
}

/// Tabulate `π*(θ) ∝ exp(−V(·, θ))` on the box `[lo, hi]` (d ≤ 2).
pub fn stationary_quadrature<P: Potential + ?Sized>(
    pot: &P,
    theta: &ParamVector,
    lo: &[f64],
    hi: &[f64],
    pts_per_axis: usize,
) -> Result<GridDistribution> {
    validate_box(lo, hi, pts_per_axis)?;
    check_dim("grid box", pot.dim(), lo.len())?;
    check_dim("parameter", pot.num_params(), theta.len())?;
    let n = pts_per_axis.pow(lo.len() as u32);
    let proto = GridDistribution {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        pts_per_axis,
        log_density: Vec::new(),
        normalized: false,
        log_z: 0.0,
    };
    let mut x = vec![0.0; lo.len()];
    let mut logv = Vec::with_capacity(n);
    for idx in 0..n {
        proto.node_into(idx, &mut x);
        logv.push(-pot.value(&x, theta));
    }
    GridDistribution::from_unnormalized(lo.to_vec(), hi.to_vec(), pts_per_axis, logv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{log_density, MixturePotential, QuadraticPotential, WeightParam};

    #[test]
    fn standard_normal_moments() {
        let q = QuadraticPotential::new(1);
        let g = stationary_quadrature(&q, &ParamVector::zeros(1), &[-8.0], &[8.0], 1601).unwrap();
        assert!(g.mean()[0].abs() < 1e-3);
        assert!((g.variance()[0] - 1.0).abs() < 1e-3);
        assert!((g.mass() - 1.0).abs() < 1e-12);
        assert!((g.z() - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn hexagon_rotation_symmetry() {
        let p = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let t = ParamVector::zeros(6);
        let g = stationary_quadrature(&p, &t, &[-4.0, -4.0], &[4.0, 4.0], 401).unwrap();
        let (c, s) = ((std::f64::consts::PI / 3.0).cos(), (std::f64::consts::PI / 3.0).sin());
        for &(x, y) in &[(0.5, 0.3), (1.7, -0.4), (-1.0, 2.2)] {
            let a = log_density(&p, &t, &[x, y], g.z()).unwrap();
            let b = log_density(&p, &t, &[c * x - s * y, s * x + c * y], g.z()).unwrap();
            assert!((a.exp() - b.exp()).abs() < 1e-6);
        }
        // Z = π for unit-bandwidth softmax mixtures; [-4, 4]² truncates the tails
        let wide = stationary_quadrature(&p, &t, &[-7.0, -7.0], &[7.0, 7.0], 401).unwrap();
        assert!((wide.z() - std::f64::consts::PI).abs() < 1e-6, "{}", wide.z());
    }

    #[test]
    fn alternating_weights_give_three_modes() {
        let p = MixturePotential::hexagon(2.0, WeightParam::Softmax).unwrap();
        let t = ParamVector::new(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let g = stationary_quadrature(&p, &t, &[-4.0, -4.0], &[4.0, 4.0], 201).unwrap();
        let at = |i: usize| {
            let a = i as f64 * std::f64::consts::PI / 3.0;
            log_density(&p, &t, &[2.0 * a.cos(), 2.0 * a.sin()], g.z()).unwrap()
        };
        for dominant in [0, 2, 4] {
            for suppressed in [1, 3, 5] {
                assert!(at(dominant) > at(suppressed));
            }
        }
    }

    #[test]
    fn rejects_three_dimensions() {
        let q = QuadraticPotential::new(3);
        assert!(stationary_quadrature(&q, &ParamVector::zeros(3), &[-1.0; 3], &[1.0; 3], 10).is_err());
    }

    #[test]
    fn sampling_reproduces_moments() {
        let q = QuadraticPotential::new(1);
        let t = ParamVector::new(vec![1.5]).unwrap();
        let g = stationary_quadrature(&q, &t, &[-8.0], &[8.0], 1601).unwrap();
        let e = g.sample(20_000, &RngStream::new(5)).unwrap();
        assert!((e.mean()[0] - 1.5).abs() < 0.05);
        assert!((e.variance()[0] - 1.0).abs() < 0.05);
        assert!(g.boundary_mass() < 1e-6);
    }

    #[test]
    fn kl_self_is_zero() {
        let q = QuadraticPotential::new(1);
        let a = stationary_quadrature(&q, &ParamVector::zeros(1), &[-8.0], &[8.0], 801).unwrap();
        let b = stationary_quadrature(&q, &ParamVector::new(vec![1.0]).unwrap(), &[-8.0], &[8.0], 801).unwrap();
        assert_eq!(a.kl_to(&a).unwrap(), 0.0);
        assert!((a.kl_to(&b).unwrap() - 0.5).abs() < 1e-6);
    }
}
