//! Deterministic, splittable random streams.
//!
//! All randomness in the crate flows from a single base seed. Independent
//! consumers (weight init, dropout, shuffling, scene generation, bootstrap
//! sampling, ...) each get their own [`RngStream`] derived by *labeled
//! hashing*: a child stream is identified by `(seed, counter)` where the
//! seed comes from `SHA-256(parent_seed || label)` and the counter is a
//! caller-chosen index (epoch number, scene index, tree index, ...).
//! The same `(seed, counter)` pair always yields the same draw sequence,
//! and draws from one stream never perturb another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// A seeded random stream identified by `(seed, counter)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Stream for `(seed, counter = 0)`.
    pub fn new(seed: u64) -> Self {
        Self::with_counter(seed, 0)
    }

    /// Stream for an explicit `(seed, counter)` pair.
    pub fn with_counter(seed: u64, counter: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(counter.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            counter,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derive an independent child stream from a text label.
    ///
    /// The child seed is the first 8 bytes (little-endian) of
    /// `SHA-256(seed_le || label_bytes)`; its counter starts at `index`.
    pub fn derive(seed: u64, label: &str, index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let child_seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        Self::with_counter(child_seed, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal_f64(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Standard normal truncated to `|z| <= bound` by resampling.
    pub fn truncated_normal(&mut self, bound: f64) -> f64 {
        loop {
            let z = self.normal_f64();
            if z.abs() <= bound {
                return z;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}
