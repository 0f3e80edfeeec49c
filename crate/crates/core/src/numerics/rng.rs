//! Seeded, platform-independent random generation.
//!
//! The generator is ChaCha8 (a fixed, published stream cipher construction), so a
//! given seed produces the same stream on every platform. Its full position can be
//! captured with [`SeededRng::state`] and restored, which is what checkpoint
//! resume relies on.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mat::Mat;
use crate::error::{Error, Result};

/// Serializable snapshot of a [`SeededRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// An independent generator for the same seed, selected by `stream`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState { seed: self.inner.get_seed(), stream: self.inner.get_stream(), word_pos: self.inner.get_word_pos() }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// A fresh permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Inverted dropout mask: entries are `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`, so the masked activations keep their expectation.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut SeededRng) -> Result<Mat> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(Mat::ones(rows, cols));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut m = Mat::zeros(rows, cols);
    for v in m.as_mut_slice() {
        if rng.uniform() >= rate {
            *v = keep;
        }
    }
    Ok(m)
}
