//! Seeded randomness.
//!
//! All stochastic code takes an explicit [`Rng`]. Independent streams are
//! derived from a base seed and a label, so adding a new consumer never shifts
//! the values another consumer sees.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

/// Counter-based generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Generator seeded directly from `seed`.
pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stable 64-bit seed derived from a base seed and a sequence of labels.
///
/// The labels are length-prefixed before hashing so `("ab", "c")` and
/// `("a", "bc")` give different seeds.
pub fn derive_seed<S: AsRef<str>>(base: u64, labels: &[S]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        let bytes = label.as_ref().as_bytes();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Generator for the stream named by `labels` under `base`.
pub fn derive(base: u64, labels: &[&str]) -> Rng {
    from_seed(derive_seed(base, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, &["a", "b"]), derive_seed(7, &["a", "b"]));
        assert_ne!(derive_seed(7, &["a", "b"]), derive_seed(8, &["a", "b"]));
        assert_ne!(derive_seed(7, &["ab", "c"]), derive_seed(7, &["a", "bc"]));
        let x: f64 = derive(1, &["init"]).gen();
        let y: f64 = derive(1, &["init"]).gen();
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
