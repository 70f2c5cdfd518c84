//! Deterministic derivation of independent RNG streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed from a base seed and a sequence of labels.
///
/// The labels are length-prefixed so `("ab", "c")` and `("a", "bc")` map to
/// different streams.
pub fn derive_seed(base: u64, labels: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
    }
    hasher.finalize().into()
}

/// RNG for one labelled stream under `base`.
pub fn stream_rng(base: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(base, labels))
}
