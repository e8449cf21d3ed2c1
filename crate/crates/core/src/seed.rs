//! Per-consumer seeds derived from one master seed.

use sha2::{Digest, Sha256};

/// Seed for the `index`-th draw of `stream` under `master`. Streams are
/// independent: changing one consumer never shifts another's randomness.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
