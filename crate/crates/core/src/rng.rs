//! Counter-based keyed random streams.
//!
//! Every draw is addressed by `(seed, experiment, slot, particle, step)`, so the
//! random numbers a particle sees do not depend on the order in which particles,
//! slots or steps are evaluated. A [`KeyedRng`] is a splitmix64 generator whose
//! state is derived from the full key and whose output is a pure function of
//! `(key, counter)`.

use rand::rand_core::impls;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Address of a random stream below a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StreamKey {
    pub experiment: u64,
    pub slot: u64,
    pub particle: u64,
    pub step: u64,
}

/// A seed plus a key. Cheap to copy; deriving sub-streams never consumes state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub key: StreamKey,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: StreamKey::default(),
        }
    }

    pub fn with_experiment(mut self, experiment: u64) -> Self {
        self.key.experiment = experiment;
        self
    }

    pub fn with_slot(mut self, slot: u64) -> Self {
        self.key.slot = slot;
        self
    }

    pub fn with_particle(mut self, particle: u64) -> Self {
        self.key.particle = particle;
        self
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.key.step = step;
        self
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> KeyedRng {
        let mut h = mix64(self.seed ^ GOLDEN);
        for part in [
            self.key.experiment,
            self.key.slot,
            self.key.particle,
            self.key.step,
        ] {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(part.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        KeyedRng {
            state: h,
            counter: 0,
        }
    }

    /// Normal draws for one particle of an ensemble.
    ///
    /// With `antithetic`, particles `2j` and `2j + 1` share the stream of pair
    /// `j` and receive opposite signs, so every pair has zero sample mean.
    pub fn fill_particle_normal(&self, particle: usize, antithetic: bool, out: &mut [f64]) {
        if antithetic {
            self.with_particle((particle / 2) as u64).fill_normal(out);
            if particle % 2 == 1 {
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
        } else {
            self.with_particle(particle as u64).fill_normal(out);
        }
    }

    /// Fill `out` with standard normal draws from this stream.
    pub fn fill_normal(&self, out: &mut [f64]) {
        let mut rng = self.rng();
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

/// splitmix64 over a key-derived state.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    state: u64,
    counter: u64,
}

impl KeyedRng {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

impl RngCore for KeyedRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.state.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let s = RngStream::new(7).with_slot(3).with_particle(11).with_step(5);
        let mut a = s.rng();
        let mut b = s.rng();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn key_components_are_distinguished() {
        let base = RngStream::new(1);
        let variants = [
            base,
            base.with_experiment(1),
            base.with_slot(1),
            base.with_particle(1),
            base.with_step(1),
            RngStream::new(2),
        ];
        let firsts: Vec<u64> = variants.iter().map(|s| s.rng().next_u64()).collect();
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                assert_ne!(firsts[i], firsts[j], "streams {i} and {j} collide");
            }
        }
        // swapping slot and particle must not alias
        let a = base.with_slot(4).with_particle(9).rng().next_u64();
        let b = base.with_slot(9).with_particle(4).rng().next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn antithetic_pairs_cancel() {
        let s = RngStream::new(3).with_step(2);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        s.fill_particle_normal(4, true, &mut a);
        s.fill_particle_normal(5, true, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn normals_have_unit_moments() {
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let z = RngStream::new(42).with_particle(i).rng().normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }
}
