//! Seeded random streams. Every consumer gets its own ChaCha stream derived
//! from the master seed, so changing how much one consumer draws never shifts
//! another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Action = 2,
    Shuffle = 3,
    Eval = 4,
    Plan = 5,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    stream_n(seed, which, 0)
}

/// Stream `which` for sub-index `n` (e.g. the n-th evaluation episode).
pub fn stream_n(seed: u64, which: Stream, n: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(which as u64);
    r
}
