//! Keyed deterministic RNG streams.
//!
//! Every stochastic component draws from a stream keyed by (seed, labels...)
//! rather than from one shared generator, so adding or reordering work never
//! shifts the randomness of unrelated items. That keeps corpora, channel
//! outputs, and feature noise reproducible byte-for-byte across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a over the concatenation of the given byte parts.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separator guards against concatenation ambiguity ("ab","c" vs "a","bc").
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// An independent generator for the stream named by `labels` under `seed`.
pub fn stream_rng(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(labels.len() + 1);
    let seed_bytes = seed.to_le_bytes();
    parts.push(&seed_bytes);
    parts.extend_from_slice(labels);
    ChaCha8Rng::seed_from_u64(fnv1a(&parts))
}
