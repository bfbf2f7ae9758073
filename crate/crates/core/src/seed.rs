//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is keyed by `(master seed, path)`
//! rather than drawn from a shared generator, so results never depend on
//! evaluation order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of stream identifiers.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream labels used when deriving seeds, kept in one place so no two
/// consumers collide.
pub mod stream {
    pub const TRAIN_POPULATION: u64 = 1;
    pub const VALIDATION_POPULATION: u64 = 2;
    pub const TEST_POPULATION: u64 = 3;
    pub const TASK_DATA: u64 = 4;
    pub const INIT: u64 = 5;
    pub const META_BATCH: u64 = 6;
    pub const GP: u64 = 7;
    pub const SHOTS: u64 = 8;
}
