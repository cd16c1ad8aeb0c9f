//! Deterministic hash-based dataset splitting: the same (id, seed) pair
//! maps to the same split forever.

use crate::rng::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Assigns one identifier to a split under the given fractions
/// (assumed positive, summing to 1).
pub fn split_of(id: &str, fractions: (f64, f64, f64), seed: u64) -> Split {
    let u = stable_hash(seed, id) as f64 / (u64::MAX as f64 + 1.0);
    if u < fractions.0 {
        Split::Train
    } else if u < fractions.0 + fractions.1 {
        Split::Val
    } else {
        Split::Test
    }
}

/// Assigns every identifier.
pub fn split_dataset(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Vec<Split> {
    ids.iter().map(|id| split_of(id, fractions, seed)).collect()
}
