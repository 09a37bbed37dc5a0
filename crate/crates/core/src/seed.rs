//! Seed plumbing. A single user seed fans out into independent sub-seeds
//! for splitting, score randomization, data generation and optimization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for sub-seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    ApsNoise = 2,
    Synth = 3,
    Graph = 4,
    Optimizer = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: Stream) -> u64 {
    splitmix64(seed ^ splitmix64(stream as u64))
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

// FNV-1a; stable across platforms and releases, unlike std's hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Uniform draw in [0, 1) determined by `(seed, item_id)` only.
pub fn item_uniform(seed: u64, item_id: &str) -> f64 {
    let h = splitmix64(derive(seed, Stream::ApsNoise) ^ fnv1a(item_id.as_bytes()));
    (h >> 11) as f64 / (1u64 << 53) as f64
}
