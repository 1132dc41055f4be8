//! Seeded random streams.
//!
//! Every stochastic step in the crate draws from a `ChaCha8Rng` derived from a
//! user seed plus a fixed stream tag, so independent consumers of the same seed
//! never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct constants keep parameter init, shuffling and
/// translation sampling decorrelated under one seed.
pub mod stream {
    pub const CORPUS: u64 = 1;
    pub const XICT_PAIRS: u64 = 2;
    pub const ENCODER_INIT: u64 = 3;
    pub const BATCH_ORDER: u64 = 4;
    pub const READER_INIT: u64 = 5;
    pub const READER_ORDER: u64 = 6;
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two values into a new seed (splitmix64 finalizer).
pub fn mix(seed: u64, value: u64) -> u64 {
    let mut z = seed ^ value.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
