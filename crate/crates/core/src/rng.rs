//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, purpose, a, b)`,
//! so adding or skipping work in one part of a run never shifts the random
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Generate = 1,
    Split = 2,
    Init = 3,
    EpochOrder = 4,
    LabeledAug = 5,
    WeakAug = 6,
    StrongAug = 7,
    Noise = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [stream as u64, a, b] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(seed: u64, stream: Stream, a: u64, b: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, a, b))
}
