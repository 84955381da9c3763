//! Reproducible random streams.
//!
//! A [`GaussianStream`] names a ChaCha8 stream by `(seed, stream_id)`.
//! Replicate `r` of an experiment uses `stream_id = r`, so a run gives the
//! same numbers whatever the number of worker threads.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GaussianStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl GaussianStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        GaussianStream { seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream_id);
        StreamRng { inner }
    }

    /// Same replicate index under an independent seed, for quantities that
    /// must not share randomness with the primary draw.
    pub fn derive(&self, tag: u64) -> Self {
        GaussianStream {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
            stream_id: self.stream_id,
        }
    }

    pub fn with_stream(&self, stream_id: u64) -> Self {
        GaussianStream {
            seed: self.seed,
            stream_id,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform on `(0, 1]`; never returns 0 so logarithms stay finite.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Standard complex normal `(g₁ + i g₂)/√2`: `E|𝒩|² = 1`, `E𝒩² = 0`.
    pub fn complex_normal(&mut self) -> Complex64 {
        let re = self.standard_normal();
        let im = self.standard_normal();
        Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    }

    /// Uniform point on the unit circle.
    pub fn unit_phase(&mut self) -> Complex64 {
        Complex64::from_polar(1.0, TAU * self.uniform())
    }

    /// Standard exponential.
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open().ln()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
