//! Seeded random streams.
//!
//! Every stochastic routine takes its generator as a parameter. Independent
//! work items (permutation rounds, experiment repetitions) get their own
//! stream derived from a master seed, so results do not depend on the order
//! in which the items run.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SvaRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SvaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family identified by `seed`.
pub fn stream(seed: u64, index: u64) -> SvaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws a fresh seed for a child computation.
pub fn child_seed<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}
