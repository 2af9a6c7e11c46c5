//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, phase, interval, index)`. Work can then be split across threads in
//! any order and still produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which part of a run a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Phase {
    Forward = 2,
    Backward = 3,
    Smoothing = 4,
    Simulation = 5,
    Split = 6,
    Evaluation = 7,
}

/// A master seed from which independent substreams are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamSeed(pub u64);

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    /// The generator for one `(phase, interval, index)` cell.
    pub fn stream(&self, phase: Phase, interval: usize, index: usize) -> ChaCha8Rng {
        let key = splitmix64(self.0 ^ splitmix64(((phase as u64) << 48) ^ interval as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index as u64);
        rng
    }

    /// Derive a child seed, e.g. one per replicate.
    pub fn child(&self, index: u64) -> StreamSeed {
        StreamSeed(splitmix64(self.0.wrapping_add(splitmix64(index ^ 0x5eed))))
    }
}
