//! Seeded randomness.
//!
//! Every stochastic component draws from [`Rng`], which is xoshiro256** seeded
//! through SplitMix64 (`seed_from_u64`). Given the same seed, the whole pipeline
//! (initialization, task generation, evaluation streams) is bit-reproducible.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256StarStar as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent child seed, so that e.g. task `i` of a run does not
/// depend on how many random numbers task `i - 1` consumed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
