//! Seeded random streams.
//!
//! Every random draw in the engine comes from a [`ChaCha8Rng`] keyed by a
//! tuple `(master, purpose, step, index)`. The tuple is folded through the
//! SplitMix64 finalizer into a 64-bit seed, so the stream for a given path
//! index is fixed no matter which worker thread ends up simulating it.
//!
//! Replication `k` of an experiment uses master seed
//! `replication_seed(master, k) = mix(master ^ mix(k + 1))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep streams for different phases
/// of a run disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Pilot = 1,
    Response = 2,
    Candidates = 3,
    Selection = 4,
    RoughFit = 5,
    FinalFit = 6,
    Valuation = 7,
    Test = 8,
}

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, step: u64, index: u64) -> u64 {
    let mut h = mix(master);
    h = mix(h ^ purpose as u64);
    h = mix(h ^ step);
    mix(h ^ index)
}

pub fn stream(master: u64, purpose: Purpose, step: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, step, index))
}

pub fn replication_seed(master: u64, replication: u64) -> u64 {
    mix(master ^ mix(replication + 1))
}
