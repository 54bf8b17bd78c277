//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. ChaCha is counter
//! based, so independent workers get independent streams of one seed via
//! [`stream`] instead of ad-hoc seed arithmetic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ImhRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ImhRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family identified by `seed`.
pub fn stream(seed: u64, index: u64) -> ImhRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A seed for a sub-task, drawn from stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, index).next_u64()
}
