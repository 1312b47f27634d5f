//! Counter-addressed random streams.
//!
//! Every random draw in the library comes from a stream addressed by
//! `(seed, tag, step, index)`. The address is hashed into a fresh
//! xoshiro256++ state, so the draws a particle sees at a given grid step do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    key: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    /// A key for an independent family of streams (a replicate, a chain
    /// iteration, a sub-task).
    pub fn child(&self, tag: u64) -> Self {
        Self {
            key: combine(self.key, tag),
        }
    }

    pub fn stream(&self, step: u64, index: u64) -> StreamRng {
        let k = combine(combine(self.key, step), index);
        StreamRng::seed_from_u64(k)
    }

    pub fn raw(&self) -> u64 {
        self.key
    }
}

/// Tags used by the library's own components, kept distinct so that e.g.
/// resampling never shares a stream with propagation.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const PROPAGATE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const TERMINAL: u64 = 4;
    pub const PROPOSAL: u64 = 5;
    pub const ACCEPT: u64 = 6;
    pub const LIKELIHOOD: u64 = 7;
    pub const THINNING: u64 = 8;
    pub const MARKS: u64 = 9;
}
