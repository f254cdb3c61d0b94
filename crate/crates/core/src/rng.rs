//! Deterministic per-index random streams.
//!
//! Every permutation and every simulated replicate draws from its own
//! generator seeded from `(seed, index)`, so results do not depend on how
//! work is split across threads.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

pub type StreamRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed for stream `index` under the master `seed`.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    let base = SplitMix64::seed_from_u64(seed).next_u64();
    SplitMix64::seed_from_u64(base.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA))).next_u64()
}

pub fn stream(seed: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, index))
}

/// Independent master seed for a named sub-purpose (e.g. the permutation
/// seed of a simulated replicate).
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    stream_seed(stream_seed(seed, purpose), index)
}
