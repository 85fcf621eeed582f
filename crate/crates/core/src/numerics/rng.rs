//! Seeded random stream shared by data synthesis, initialization, training
//! and inference.
//!
//! The generator is ChaCha8 (`rand_chacha`), whose output stream is fixed by
//! its algorithm rather than by the `rand` release. Standard normal draws use
//! the ziggurat sampler from `rand_distr` 0.5; the Gaussian sampler below
//! always scales a standard draw afterwards, so `sigma * z` is exact.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the range is a single point.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.uniform()
        }
    }

    /// Uniform index in `0..n`. `n` must be positive.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// `length` i.i.d. draws from `N(0, sigma^2)`, each a standard draw times `sigma`.
pub fn sample_gaussian<T: Scalar>(rng: &mut Rng, length: usize, sigma: T) -> Result<Vec<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and > 0, got {sigma}"
        )));
    }
    Ok((0..length)
        .map(|_| T::from_f64_lossy(rng.standard_normal()) * sigma)
        .collect())
}

/// Fills `out` in place; same stream and scaling as [`sample_gaussian`].
pub(crate) fn fill_gaussian<T: Scalar>(rng: &mut Rng, out: &mut [T], sigma: T) {
    for v in out {
        *v = T::from_f64_lossy(rng.standard_normal()) * sigma;
    }
}
