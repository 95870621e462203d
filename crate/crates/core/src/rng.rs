//! Seeded random streams. Every stochastic component draws from its own
//! ChaCha stream derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

/// Independent stream `stream` of the run seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids, one per component.
pub mod streams {
    pub const SCENES: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EVAL_SCENES: u64 = 3;
    pub const BENCH: u64 = 4;
    pub const PROBLEM: u64 = 5;
}
