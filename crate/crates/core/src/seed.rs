//! Seed derivation and the crate-wide PRNG.
//!
//! Every derived seed is `SHA-256(le_u64(parent) || utf8(label))`, truncated to
//! the first eight digest bytes read as a little-endian `u64`. Random streams
//! are `Pcg64` (PCG XSL-RR 128/64) initialised with `seed_from_u64`, which
//! expands the seed through PCG32 as specified by `rand_core`. Both are fully
//! defined byte-for-byte, so other implementations can reproduce every draw.

use rand::SeedableRng;
use rand_pcg::Pcg64;
use sha2::{Digest, Sha256};

pub type SigRng = Pcg64;

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    truncate(&hasher.finalize())
}

/// Seed from a sequence of text parts, each terminated by a zero byte.
pub fn seed_from_parts(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    truncate(&hasher.finalize())
}

pub fn rng(seed: u64) -> SigRng {
    Pcg64::seed_from_u64(seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn truncate(digest: &[u8]) -> u64 {
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
