//! Seeded, labelled random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed. The label (and
//! an optional worker index) selects the ChaCha stream id, so streams with
//! the same seed never overlap and consuming one never shifts another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Arrivals = 1,
    Gating = 2,
    Fading = 3,
    PolicyInit = 4,
    Rollout = 5,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    label: StreamLabel,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self::indexed(seed, label, 0)
    }

    /// A stream for one of several parallel consumers of the same label.
    pub fn indexed(seed: u64, label: StreamLabel, index: u32) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((index as u64) << 8) | label as u64);
        Self { label, inner }
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Unit-mean exponential.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Poisson draw. Exact inversion below mean 30, rounded normal
    /// approximation (clamped at 0) above.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean < 30.0 {
            let u = self.uniform();
            let mut p = (-mean).exp();
            let mut cdf = p;
            let mut k = 0u64;
            while u > cdf {
                k += 1;
                p *= mean / k as f64;
                cdf += p;
                // cdf can stall just below 1.0 in floating point
                if p < f64::MIN_POSITIVE {
                    break;
                }
            }
            k
        } else {
            let x = mean + mean.sqrt() * self.normal();
            x.round().max(0.0) as u64
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
