//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream whose seed
//! is derived from `(master seed, domain, index)` by chained SplitMix64
//! finalizers. Each consumer therefore sees the same numbers no matter how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in run manifests.
pub const RNG_ALGORITHM: &str =
    "ChaCha8 (rand_chacha 0.9), substreams seeded by SplitMix64(master seed, domain, index)";

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for substreams. Values are part of the reproducibility
/// contract and must not be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SynthMode = 1,
    SynthShuffle = 2,
    Repetition = 3,
    Forest = 4,
    Tree = 5,
    Permutation = 6,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain as u64) ^ index)
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, index))
}
