//! Seedable, splittable randomness.
//!
//! All stochastic operations in this crate take a `u64` seed and draw from
//! ChaCha8, so results are bit-reproducible across platforms. Independent
//! streams (one per environment, per restart, ...) are derived with
//! [`derive_seed`] so that concurrent work never shares generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in this crate.
pub type Rng = ChaCha8Rng;

/// Builds the root generator for a given seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream label.
///
/// SplitMix64 finalizer over the pair; good dispersion, stable across
/// platforms, and cheap enough to call per stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
