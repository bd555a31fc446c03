//! Seeded random streams.
//!
//! Every random realization in a run is drawn from a stream keyed by
//! `(seed, tags...)`. Streams never depend on what a scheme decided earlier,
//! so two schemes run under one seed see the same channels, compute draws,
//! shards and attack placements.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const POSITION: u64 = 3;
    pub const CHANNEL: u64 = 4;
    pub const COMPUTE: u64 = 5;
    pub const GLOBAL_INIT: u64 = 6;
    pub const LOCAL_TRAIN: u64 = 7;
    pub const BAD_NODE: u64 = 8;
    pub const RSU_TRAIN: u64 = 9;
    pub const AGENT_INIT: u64 = 10;
    pub const EXPLORATION: u64 = 11;
    pub const REPLAY: u64 = 12;
    pub const ATTACK_SCHEDULE: u64 = 13;
    pub const SLOT: u64 = 14;

    pub const STAGE_TRAIN: u64 = 100;
    pub const STAGE_TEST: u64 = 101;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `seed`; order matters.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| {
        splitmix64(acc ^ splitmix64(t.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

pub fn stream(seed: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(seed, tags))
}
