//! Deterministic seed derivation so parallel and serial runs draw identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with a splitmix64 finalizer per step.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

// Stream tags keep unrelated draws apart even when the other parts coincide.
pub(crate) const TAG_CENTROIDS: u64 = 1;
pub(crate) const TAG_CLEAN: u64 = 2;
pub(crate) const TAG_IDENTITY_TEST: u64 = 3;
pub(crate) const TAG_IDENTITY_TRAIN: u64 = 4;
pub(crate) const TAG_REFERENCES: u64 = 5;
pub(crate) const TAG_INSTANCE: u64 = 6;
