//! Derived deterministic RNG streams.
//!
//! Every random decision in training draws from its own stream, keyed by the
//! run seed, a purpose tag, and integer coordinates (epoch, step, example).
//! Streams are independent of call order, so resuming a run from a
//! checkpoint replays the exact randomness of an uninterrupted run without
//! serializing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    let mut h = hash;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// RNG for one (seed, purpose, coordinates) triple. Stable across platforms
/// and releases: the key is hashed with FNV-1a, not the standard library
/// hasher.
pub fn stream_rng(seed: u64, purpose: &str, coords: &[u64]) -> ChaCha8Rng {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    for c in coords {
        h = fnv1a(h, &c.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(h)
}
