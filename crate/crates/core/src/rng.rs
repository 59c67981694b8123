//! Counter-based seed derivation: every independent random stream (one
//! segment, one image, one Monte-Carlo replacement) gets its own ChaCha
//! stream keyed by the master seed, so results do not depend on the order in
//! which work items are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream families. Keeping them apart guarantees that, say, segment 3 and
/// image 3 never share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Truth = 1,
    Segment = 2,
    Image = 3,
    Split = 4,
    Init = 5,
    Batches = 6,
    Replacement = 7,
    Shuffle = 8,
    Augment = 9,
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

/// A 64-bit seed unique to `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    stream_rng(master, stream, index).next_u64()
}
