//! Seeded randomness.
//!
//! Every stochastic operation in the crate takes an explicit `u64` seed and
//! builds a [`Rng`] from it. ChaCha8 is portable across platforms, so a seed
//! reproduces the same stream everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Builds the crate generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable child seed for stream `index` under `parent`.
///
/// `derive_seed(parent, j) = splitmix64(parent ^ splitmix64(j))`. Child seeds
/// depend only on `(parent, j)`, so growing a forest never perturbs the
/// trees that were already there.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}
