//! Seeded randomness.
//!
//! Every random draw in the crate comes from SplitMix64 (Steele, Lea & Flood),
//! a 64-bit counter-based generator: the state advances by the constant
//! `0x9E3779B97F4A7C15` and each output is a fixed bijective mix of the
//! counter. Uniform doubles take the top 53 bits of an output. Because the
//! generator is a few lines in any language, seeds are portable.
//!
//! Seed splitting: run `i` of a sweep with master seed `m` uses the `i`-th
//! output (0-based) of SplitMix64 seeded with `m`.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
pub use rand_xoshiro::SplitMix64;

use crate::scalar::Scalar;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Derives the per-run seed for run `index` from a master seed.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut rng = seeded(master);
    let mut out = 0;
    for _ in 0..=index {
        out = rng.next_u64();
    }
    out
}

/// Uniform double in `[0, 1)` from the top 53 bits of one output.
#[inline]
pub fn unit_f64(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<T: Scalar>(rng: &mut SplitMix64, dim: usize) -> Vec<T> {
    (0..dim)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}
