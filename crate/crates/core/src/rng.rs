//! Seeding and sampling helpers.
//!
//! All randomness flows through [`ChaCha8Rng`] seeded from a 64-bit value,
//! so streams are identical across platforms. Derived seeds are produced by
//! SplitMix64 mixing:
//!
//! ```text
//! derive_seed(seed, parts) = fold(parts, splitmix64(seed), |h, p| splitmix64(h ^ p))
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type OpeRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> OpeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One SplitMix64 finalization step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |h, &p| splitmix64(h ^ p))
}

/// FNV-1a over a string, used to turn names into seed components.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Draws an index from a probability vector by inverse-CDF lookup.
///
/// Falls back to the last index with positive mass when rounding leaves
/// the uniform draw above the accumulated total.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
