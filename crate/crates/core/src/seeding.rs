//! Deterministic seed derivation so that every random draw is a pure function
//! of a base seed and a stable label (video id, rater slot, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(base: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

/// Short stable hex digest of `|`-joined parts, used for record identifiers.
pub fn short_hash(parts: &[&str]) -> String {
    let digest = Sha256::digest(parts.join("|").as_bytes());
    hex::encode(&digest[..8])
}
