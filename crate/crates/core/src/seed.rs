//! Seed derivation. Every random choice in the pipeline draws from a
//! generator seeded by [`derive_seed`] so that each draw is reproducible on
//! its own (one Monte Carlo split, one epoch's shuffle, one sample's
//! augmentation) regardless of what ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Domain tags that keep independent random streams apart.
pub mod stream {
    pub const PARTITION: u64 = 0x5041_5254;
    pub const QUERY_GALLERY: u64 = 0x5147_5350;
    pub const VALIDATION: u64 = 0x5641_4c49;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const INIT: u64 = 0x494e_4954;
    pub const VISUALIZE: u64 = 0x5649_535a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> SeededRng {
    SeededRng::seed_from_u64(derive_seed(base, tags))
}
