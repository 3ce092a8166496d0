//! Deterministic seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `tag` under `seed`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

pub const SCENE: u64 = 1;
pub const RENDER: u64 = 2;
pub const DEGRADE: u64 = 3;
pub const CORRUPT_CHOICE: u64 = 4;
pub const PROJECTION: u64 = 5;
pub const VOCAB: u64 = 6;
pub const INIT: u64 = 7;
pub const SHUFFLE: u64 = 8;
pub const DROPOUT: u64 = 9;
