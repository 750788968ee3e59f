//! Seed derivation. Every run's seed is a hash of (base seed, stream, index)
//! so that estimation, evaluation and pilot runs never share a seed.

use serde::{Deserialize, Serialize};

/// Substreams used by the experiments.
pub const STREAM_ESTIMATION: u64 = 1;
pub const STREAM_EVALUATION: u64 = 2;
pub const STREAM_PILOT: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03)) ^ index)
}

/// A named family of run seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    pub base: u64,
    pub stream: u64,
}

impl SeedStream {
    pub fn new(base: u64, stream: u64) -> Self {
        SeedStream { base, stream }
    }

    pub fn seed(&self, index: u64) -> u64 {
        derive_seed(self.base, self.stream, index)
    }

    /// A child stream, e.g. one per symbol or per sweep point.
    pub fn child(&self, tag: u64) -> SeedStream {
        SeedStream {
            base: derive_seed(self.base, self.stream, tag ^ 0x5eed_0000_0000_0000),
            stream: self.stream,
        }
    }
}

impl std::fmt::Display for SeedStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "base={} stream={}", self.base, self.stream)
    }
}
