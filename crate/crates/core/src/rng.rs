//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based stream
//! cipher generator. A run is identified by a 64-bit seed; independent
//! consumers (batch shuffling, each query's negative draw, augmentation) get
//! their own 64-bit stream id, so results do not depend on the order or
//! parallelism in which consumers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream used for the random-pair augmentation of a corpus.
pub const AUGMENT_STREAM: u64 = u64::MAX;
/// Stream used to shuffle pairs into batches.
pub const SHUFFLE_STREAM: u64 = u64::MAX - 1;
/// Stream used to initialise scorer parameters.
pub const INIT_STREAM: u64 = u64::MAX - 2;
/// Stream used by the synthetic data generator.
pub const SYNTH_STREAM: u64 = u64::MAX - 3;

/// Generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id of the negative draw for the `query_pos`-th query of batch `batch`.
pub fn query_stream(batch: usize, query_pos: usize) -> u64 {
    ((batch as u64) << 32) | (query_pos as u64 & 0xffff_ffff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_repeat() {
        let a: Vec<u64> = stream_rng(7, 3).random_iter().take(4).collect();
        let b: Vec<u64> = stream_rng(7, 3).random_iter().take(4).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_are_distinct() {
        let a: u64 = stream_rng(7, 3).random();
        let b: u64 = stream_rng(7, 4).random();
        let c: u64 = stream_rng(8, 3).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn query_streams_do_not_collide() {
        assert_ne!(query_stream(0, 1), query_stream(1, 0));
        assert_ne!(query_stream(2, 0), SHUFFLE_STREAM);
    }
}
