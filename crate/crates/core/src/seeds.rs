//! Order-independent seed derivation.

use sha2::{Digest, Sha256};

/// A child seed that depends only on `base` and `parts`, so parallel work
/// items get the same stream regardless of scheduling.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
