//! Deterministic seed splitting.
//!
//! Every random stream is derived from the master seed by a chain of
//! `derive(parent, label)` calls; there is no global RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `label` of `parent`.
pub fn derive(parent: u64, label: u64) -> u64 {
    mix(mix(parent) ^ label.wrapping_mul(0xD605_BBB5_8C8A_BBFD))
}

/// Labels for the per-stage component streams.
pub mod stream {
    pub const POPULATION: u64 = 1;
    pub const OPPONENTS: u64 = 2;
    pub const QOS: u64 = 3;
    pub const PRICING: u64 = 4;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
