//! Seed derivation. Every random stream in the crate is derived from one master
//! seed with [`derive_seed`], so a run is reproducible from that seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `seed`: `mix(seed + (index + 1) * φ64)`, where
/// `φ64 = 0x9e3779b97f4a7c15`. Distinct indices give decorrelated children.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams, so callers don't collide on raw indices.
pub mod stream {
    pub const MODEL_INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const ITERATION_BASE: u64 = 1 << 20;
    pub const RUN_BASE: u64 = 1 << 32;
}
