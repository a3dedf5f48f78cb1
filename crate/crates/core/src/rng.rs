//! Seeded randomness. Every random draw in the pipeline flows from a single
//! master seed through a named sub-stream, so components stay reproducible
//! independently of each other (reshuffling training does not disturb the
//! split, and so on).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Named randomness consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Dropout,
    Split,
    Synth,
    GradCheck,
}

impl Stream {
    fn label(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Shuffle => "shuffle",
            Stream::Dropout => "dropout",
            Stream::Split => "split",
            Stream::Synth => "synth",
            Stream::GradCheck => "gradcheck",
        }
    }
}

/// RNG for a sub-stream of the master seed.
pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha20Rng {
    keyed_rng(master_seed, stream, &[])
}

/// RNG for a sub-stream further keyed by arbitrary bytes (e.g. a user id or
/// an iteration counter), independent of any other key.
pub fn keyed_rng(master_seed: u64, stream: Stream, key: &[u8]) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update([stream.label().len() as u8]);
    hasher.update(stream.label().as_bytes());
    hasher.update(key);
    let digest = hasher.finalize();
    ChaCha20Rng::from_seed(digest.into())
}
