//! Seed derivation.
//!
//! Every random decision is drawn from its own ChaCha8 stream whose seed is
//! derived from the root seed, a purpose tag and up to two indices, so the
//! result of e.g. augmenting sample 17 in epoch 3 does not depend on the
//! order in which samples are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer increment.
pub const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Folds = 4,
    Synth = 5,
    GradCheck = 6,
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream `(root, purpose, a, b)`.
pub fn derive_seed(root: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = mix64(root.wrapping_add(GOLDEN_GAMMA));
    for word in [purpose as u64, a, b] {
        h = mix64(h ^ word.wrapping_add(GOLDEN_GAMMA).wrapping_mul(GOLDEN_GAMMA));
    }
    h
}

pub fn stream(root: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, a, b))
}
