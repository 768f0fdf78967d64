//! Particle ensembles and parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// Uniform-weight empirical measure over `n` points of dimension `d`.
///
/// Points are stored row-major in one buffer. Construction rejects empty
/// ensembles and non-finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    dim: usize,
    data: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("ensemble dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid("ensemble must contain at least one point"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate in point {}",
                pos / dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.as_ref().len())
            .ok_or_else(|| Error::invalid("ensemble must contain at least one point"))?;
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            check_dim("ensemble point", dim, p.as_ref().len())?;
            data.extend_from_slice(p.as_ref());
        }
        Self::new(dim, data)
    }

    /// Build from a buffer already known to be valid.
    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !data.is_empty() && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate population variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut var = vec![0.0; self.dim];
        for p in self.points() {
            for ((acc, v), mu) in var.iter_mut().zip(p).zip(&m) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let n = self.len() as f64;
        var.iter_mut().for_each(|v| *v /= n);
        var
    }

    /// Apply `f` to every coordinate of a copy (used to move a whole ensemble).
    pub fn map_points(&self, mut f: impl FnMut(usize, &[f64], &mut [f64])) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for (i, (src, dst)) in self
            .points()
            .zip(out.chunks_exact_mut(self.dim))
            .enumerate()
        {
            f(i, src, dst);
        }
        Self::from_raw(self.dim, out)
    }
}

/// A probability measure given by weighted points.
///
/// Estimators are written against this trait so the same code evaluates
/// `Γ` on a particle ensemble (weights `1/n`) and on a quadrature grid.
pub trait WeightedPoints {
    fn dim(&self) -> usize;

    fn num_points(&self) -> usize;

    /// Visit `(weight, point)` pairs in a fixed order. Weights sum to one.
    fn for_each_weighted(&self, f: &mut dyn FnMut(f64, &[f64]));
}

impl WeightedPoints for ParticleEnsemble {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_points(&self) -> usize {
        self.len()
    }

    fn for_each_weighted(&self, f: &mut dyn FnMut(f64, &[f64])) {
        let w = 1.0 / self.len() as f64;
        for p in self.points() {
            f(w, p);
        }
    }
}

/// The optimization variable θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `θ − step · direction`, rejecting non-finite results.
    pub fn descend(&self, step: f64, direction: &[f64]) -> Result<Self> {
        check_dim("descent direction", self.len(), direction.len())?;
        let next = self
            .0
            .iter()
            .zip(direction)
            .map(|(t, g)| t - step * g)
            .collect();
        Self::new(next)
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// `n` i.i.d. draws from `N(mean, stddev² I_d)`; particle `i` reads the
/// stream keyed by particle index `i`.
pub fn gaussian_ensemble(
    n: usize,
    d: usize,
    mean: &[f64],
    stddev: f64,
    rng: &RngStream,
) -> Result<ParticleEnsemble> {
    gaussian_ensemble_with(n, d, mean, stddev, false, rng)
}

/// [`gaussian_ensemble`] with optional antithetic pairing of the draws.
pub fn gaussian_ensemble_with(
    n: usize,
    d: usize,
    mean: &[f64],
    stddev: f64,
    antithetic: bool,
    rng: &RngStream,
) -> Result<ParticleEnsemble> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("gaussian ensemble needs n > 0 and d > 0"));
    }
    check_dim("gaussian mean", d, mean.len())?;
    if !(stddev >= 0.0 && stddev.is_finite()) {
        return Err(Error::invalid("stddev must be finite and nonnegative"));
    }
    let mut data = vec![0.0; n * d];
    for (i, chunk) in data.chunks_exact_mut(d).enumerate() {
        rng.fill_particle_normal(i, antithetic, chunk);
        for (v, m) in chunk.iter_mut().zip(mean) {
            *v = m + stddev * *v;
        }
    }
    ParticleEnsemble::new(d, data)
}
