//! Counter-based random streams.
//!
//! Every random draw in a simulation is keyed by a tuple of integers
//! (seed, purpose, agent, link, time, ...). The key is hashed into a 64-bit
//! seed for a fresh ChaCha8 generator, so any single draw can be replayed
//! without touching the rest of the realization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
pub mod tag {
    pub const LINK_NOISE: u64 = 0x6c696e6b;
    pub const GRAD_NOISE: u64 = 0x67726164;
    pub const TOPOLOGY: u64 = 0x746f706f;
    pub const DATA: u64 = 0x64617461;
    pub const TRIAL: u64 = 0x7472696c;
    pub const REFERENCE: u64 = 0x72656621;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of key parts into one 64-bit value.
pub fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

/// A generator for the stream identified by `parts`.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
