//! Deterministic stream derivation.
//!
//! Every trial, calibration run and ground-truth draw gets its own ChaCha
//! stream derived from `(base seed, purpose, context words)`. Results are
//! therefore independent of execution order and of how work is spread over
//! threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint even when the
/// remaining context words collide.
pub(crate) const PURPOSE_TRIAL: u64 = 1;
pub(crate) const PURPOSE_CALIBRATION: u64 = 2;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG from a base seed and context words.
pub fn derive_rng(base: u64, words: &[u64]) -> ChaCha8Rng {
    let mut acc = mix(base ^ 0x6A09_E667_F3BC_C908);
    for &w in words {
        acc = mix(acc.rotate_left(17) ^ w);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        acc = mix(acc);
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// FNV-1a over bytes; stable across platforms and releases.
pub fn hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
