//! Seeded random streams.
//!
//! Every consumer of randomness (each agent, the adversary, the evaluator,
//! the cross-evaluation shuffler) owns an independent ChaCha stream derived
//! from the run seed, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags for stream derivation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Agent = 1,
    Adversary = 2,
    Evaluation = 3,
    CrossEval = 4,
    Maze = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream as u64) ^ index)
}

pub fn stream(seed: u64, stream: Stream, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, index))
}
