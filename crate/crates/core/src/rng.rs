//! Seeded randomness. Every initializer, dropout mask and shuffle draws from
//! a [`Rng`] derived from the single experiment seed.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a list of indices
/// (step, sentence, ...), so work can be split across threads without
/// changing the draws.
pub fn derive(seed: u64, parts: &[u64]) -> Rng {
    seeded(derive_seed(seed, parts))
}

/// The seed [`derive`] starts from.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = splitmix(z ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn uniform<F: Scalar>(rng: &mut Rng, low: f64, high: f64) -> F {
    F::of(rng.random_range(low..high))
}

pub fn normal<F: Scalar>(rng: &mut Rng, std: f64) -> F {
    let d = Normal::new(0.0f64, std).expect("finite std");
    F::of(d.sample(rng))
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> alloc::vec::Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub fn bernoulli(rng: &mut Rng, p: f64) -> bool {
    rng.random_bool(p)
}
