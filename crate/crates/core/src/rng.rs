//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by a base
//! seed plus a list of tags (epoch, pair index, purpose). Streams never
//! depend on how many numbers an earlier stage consumed, which is what makes
//! resumed training and per-pair parallelism reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for t in tags {
        hasher.update(t.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stable 64-bit tag for a string label.
pub fn tag(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_independent_of_tag_order() {
        let a: u64 = stream(7, &[1, 2]).gen();
        let b: u64 = stream(7, &[2, 1]).gen();
        let c: u64 = stream(7, &[1, 2]).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
