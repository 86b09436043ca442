//! Seeded, stream-partitioned random number generation.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for replicate `stream` of a run seeded by `seed`.
///
/// Streams are disjoint counter partitions of one keyed cipher, so any
/// replicate is reproducible in isolation and replicates never share
/// output regardless of how work is scheduled across threads.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
