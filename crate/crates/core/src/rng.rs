//! Seed derivation. Every stochastic component gets its own ChaCha stream
//! derived from the run seed plus a tag path, so results do not depend on
//! the order in which (possibly parallel) work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, kept in one place so two components never collide.
pub mod stream {
    pub const INIT_GENERATOR: u64 = 1;
    pub const INIT_DISCRIMINATOR: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const D_PHASE: u64 = 4;
    pub const G_PHASE: u64 = 5;
    pub const UNLABELED_SPLIT: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const OCCLUDE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const CV: u64 = 10;
    pub const LABEL_MASK: u64 = 11;
}
