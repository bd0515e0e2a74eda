//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha` 0.3). Independent streams
//! are derived from one seed through ChaCha's 64-bit stream selector, so each
//! episode, item source and policy owns a reproducible generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream selectors used when splitting an episode seed.
pub mod streams {
    pub const ITEMS: u64 = 0;
    pub const POLICY: u64 = 1;
    pub const PREFERENCE: u64 = 2;
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn split(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
