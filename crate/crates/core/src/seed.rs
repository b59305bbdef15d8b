//! Deterministic stream derivation. One master seed fans out into named,
//! indexed ChaCha8 generators so that every consumer (collection rollout k,
//! optimizer init, evaluation rollout r, ...) owns an independent stream and
//! matched-seed comparisons across controller variants consume identical noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Single derived 64-bit seed for `(master, label, index)`.
pub fn derive(master: u64, label: &str, index: u64) -> u64 {
    let mut s = master ^ fnv1a64(label.as_bytes()) ^ index.wrapping_mul(0xd1b54a32d192ed03);
    splitmix64(&mut s)
}

/// Independent ChaCha8 stream for `(master, label, index)`.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut s = master ^ fnv1a64(label.as_bytes()) ^ index.wrapping_mul(0xd1b54a32d192ed03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
