//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(seed, stream)`. Replicate `r` of an experiment always reads the same
//! stream no matter which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes multiplexed into the stream id of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Design = 1,
    Signal = 2,
    Noise = 3,
    Folds = 4,
    Probe = 5,
    Packing = 6,
    Search = 7,
}

pub fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for one purpose inside one replicate.
pub fn replicate_stream(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    keyed(seed, (replicate << 8) | purpose as u64)
}
