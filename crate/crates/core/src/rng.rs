//! Random streams.
//!
//! Every stochastic quantity draws from a [`SimRng`] seeded by
//! [`derive_seed`], so a stream is a pure function of the master seed and the
//! coordinates of the work item that owns it. Worker count and scheduling
//! never enter.
//!
//! Derivation rule: `seed' = mix(... mix(mix(master) ^ mix(p0)) ... ^ mix(pk))`
//! where `mix` is the SplitMix64 finalizer applied after adding the golden
//! ratio increment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags that separate the independent streams of one work item.
pub mod tag {
    pub const FEATURES: u64 = 0x6665_6174;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const CHAIN: u64 = 0x6368_6169;
    pub const RISK: u64 = 0x7269_736b;
    pub const RETRY: u64 = 0x7265_7472;
    pub const ORACLE: u64 = 0x6f72_6163;
    pub const PROBE: u64 = 0x7072_6f62;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an ordered list of coordinates.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `stream(derive_seed(master, parts))`.
pub fn substream(master: u64, parts: &[u64]) -> SimRng {
    stream(derive_seed(master, parts))
}
