//! Deterministic random streams.
//!
//! Every pipeline stage draws from its own ChaCha12 stream whose seed is
//! derived from the experiment root seed plus a textual label
//! (`"{root}:{label}"` hashed with SHA-256, first eight bytes). Stages
//! therefore never share or perturb each other's randomness: re-running one
//! stage in isolation, or reordering stages, replays identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from a root seed and a stage label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_string().as_bytes());
    hasher.update(b":");
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// A fresh deterministic RNG for one `(root, label)` pair.
pub fn stream(root: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(root, label))
}
