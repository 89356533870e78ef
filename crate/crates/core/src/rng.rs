//! Seeded random streams. Every consumer of randomness owns its own stream so
//! results do not depend on call interleaving between components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type RngStream = ChaCha8Rng;

/// Independent stream `stream` of the generator family keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named streams used by the training loops.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const EXPLORATION: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const TARGET_NOISE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SUBSET: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const DEMO_BATCH: u64 = 9;
    pub const CHECKPOINT_PICK: u64 = 10;
    pub const DEMOS: u64 = 11;
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two distinct indices drawn uniformly without replacement from `0..n`.
pub fn distinct_pair(rng: &mut impl Rng, n: usize) -> [usize; 2] {
    assert!(n >= 2, "need at least two members to draw a pair");
    let first = rng.random_range(0..n);
    let mut second = rng.random_range(0..n - 1);
    if second >= first {
        second += 1;
    }
    [first, second]
}
