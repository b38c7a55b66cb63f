//! Seeded random streams. Every stochastic operation takes a seed and derives
//! its own stream, so a run is reproducible from `(seed, config)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream for `seed`, further split by a purpose tag and an index.
pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(mix(tag, index));
    rng
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod tags {
    pub const KMEANS: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const HEAD_INIT: u64 = 3;
    pub const MIXUP: u64 = 4;
    pub const PROJECTOR_INIT: u64 = 5;
}

/// Seed for the `index`-th independent sub-task of a run (e.g. one class).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(seed, index)
}
