//! Deterministic named random streams.
//!
//! All randomness in the pipeline flows from one root seed through named
//! sub-streams so individual stages (simulation, cropping, pairing,
//! splitting) can be re-run in isolation with identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the label and stream index, mixed with the root seed.
/// Hand-rolled so stream derivation stays stable across std releases.
fn derive(root: u64, label: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET ^ root;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for b in index.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    // splitmix64 finalizer to decorrelate nearby indices
    h = h.wrapping_add(0x9e3779b97f4a7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

/// A seeded generator for the sub-stream `(label, index)` of `root`.
pub fn stream(root: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(root, label, index))
}

/// Stable 64-bit hash of an identifier string under a seed, used for
/// deterministic dataset splitting.
pub fn stable_hash(seed: u64, id: &str) -> u64 {
    derive(seed, id, 0)
}
