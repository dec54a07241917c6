//! Seeded, splittable randomness.
//!
//! Every stochastic step in the pipeline (weight init, shuffling, dropout,
//! splits, synthetic data) draws from a `ChaCha8Rng` derived from one root
//! seed and a component tag, so independent components never share a stream
//! and whole runs replay bit-identically.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a component stream from the root seed and a tag.
///
/// The tag is folded into the seed with SplitMix64 so that nearby seeds and
/// tags still yield unrelated streams.
pub fn component_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = seed;
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(splitmix64(h))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
