//! Seed plumbing. Every stochastic step in the pipeline draws from a
//! ChaCha stream derived from the run seed plus a stable tag, so results do
//! not depend on call order across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer; mixes `tag` into `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64, tag: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Stable tags for each consumer of randomness.
pub mod tags {
    pub const FOLDS: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const STUB: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const SVM: u64 = 7;
}
