//! Named, index-addressed random substreams.
//!
//! Every consumer of randomness asks for a stream by `(seed, name, indices)`.
//! The stream is seeded from a SHA-256 of that key, so results never depend on
//! which thread or in what order a stream is created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Root of all substreams for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str, indices: &[u64]) -> Rng {
        substream(self.seed, name, indices)
    }

    /// A child tree whose streams are disjoint from the parent's.
    pub fn child(&self, name: &str, indices: &[u64]) -> SeedTree {
        let digest = key_digest(self.seed, name, indices);
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        SeedTree {
            seed: u64::from_le_bytes(word),
        }
    }
}

fn key_digest(seed: u64, name: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}

pub fn substream(seed: u64, name: &str, indices: &[u64]) -> Rng {
    ChaCha8Rng::from_seed(key_digest(seed, name, indices))
}
