//! Hierarchical seed derivation.
//!
//! Every random stream in a run is keyed by the experiment seed plus a fixed
//! tag, so adding workers or reordering work never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 1;
pub const NOISE: u64 = 2;
pub const SEARCH: u64 = 3;
pub const TRAIN: u64 = 4;
pub const INIT_A: u64 = 5;
pub const INIT_B: u64 = 6;
pub const SHUFFLE: u64 = 7;

/// SplitMix64 finalizer over `seed` and `tag`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

/// Independent stream for worker `index` under one experiment seed.
pub fn worker_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
