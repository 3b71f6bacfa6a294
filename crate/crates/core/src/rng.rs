//! Seed expansion. Every random stream in the crate is derived from a user seed
//! plus a path of integer keys, so results never depend on iteration order or
//! on how work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a key path.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| {
        splitmix64(acc ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

/// A generator for the stream identified by `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

// Domain tags keep streams used for different purposes apart.
pub(crate) const TAG_SPLIT: u64 = 1;
pub(crate) const TAG_NULL_COPY: u64 = 2;
pub(crate) const TAG_JOINT: u64 = 3;
pub(crate) const TAG_CV: u64 = 4;
pub(crate) const TAG_BATCH: u64 = 5;
pub(crate) const TAG_DESIGN: u64 = 6;
pub(crate) const TAG_REPLICATE: u64 = 7;
pub(crate) const TAG_ORACLE: u64 = 8;
pub(crate) const TAG_NOISE: u64 = 9;
