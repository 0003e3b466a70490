//! Hierarchical seeded random streams.
//!
//! A [`SeedStream`] is a pure key: deriving a child never consumes randomness,
//! so the generator handed to a draw depends only on the path of keys that
//! led to it. Draws keyed by `(n, scenario, method, replication)` are
//! therefore reproducible no matter how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        SeedStream {
            key: splitmix64(master_seed),
        }
    }

    /// Substream identified by an integer label.
    pub fn child(&self, label: u64) -> Self {
        SeedStream {
            key: splitmix64(self.key ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    /// Substream identified by a string label (e.g. a method name).
    pub fn named(&self, label: &str) -> Self {
        // FNV-1a; stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Materialize the generator for this stream.
    pub fn rng(&self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut z = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
