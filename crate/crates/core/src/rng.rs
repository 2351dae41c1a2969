//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator
//! (`rand_chacha::ChaCha8Rng`). A stream is identified by a pair
//! `(master_seed, index)`: the key is expanded from `master_seed` with
//! `SeedableRng::seed_from_u64` and `index` selects the ChaCha stream
//! (`set_stream`). Distinct indices give independent, non-overlapping
//! sequences, so replicate `r` of a run or block `b` of a Monte Carlo
//! estimate is reproducible on its own, whatever the number of worker
//! threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// The `index`-th stream under `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A child seed, taken as the first word of stream `index`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    stream(master_seed, index).next_u64()
}
