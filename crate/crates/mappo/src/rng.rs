//! Named random streams derived from one root seed.
//!
//! Every consumer draws from `ChaCha8(seed)` on its own ChaCha stream
//! `stream_id << 40 | index`, where `index` is the update (or episode) number.
//! Streams never overlap, and any update can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter initialization.
pub const INIT: u64 = 1;
/// Episode resets (spawn jitter).
pub const LAYOUT: u64 = 2;
/// Action sampling during rollouts.
pub const ACTION: u64 = 3;
/// Minibatch shuffling.
pub const SHUFFLE: u64 = 4;
/// Evaluation episodes.
pub const EVAL: u64 = 5;

pub fn stream(seed: u64, stream_id: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream_id << 40) | (index & ((1 << 40) - 1)));
    rng
}
