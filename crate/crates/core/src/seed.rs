//! Stable seed derivation. Child seeds depend only on the parent seed and a
//! label, never on iteration or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn derive(parent: u64, tag: &[u8], label: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(tag);
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label);
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for run `run` (1-based) of a multi-run evaluation.
pub fn run_seed(global_seed: u64, run: usize) -> u64 {
    derive(global_seed, b"run", &(run as u64).to_le_bytes())
}

/// Seed for one dialogue under a run (or global) seed.
pub fn dialogue_seed(seed: u64, dialogue_id: &str) -> u64 {
    derive(seed, b"dialogue", dialogue_id.as_bytes())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
