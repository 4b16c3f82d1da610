use sha2::{Digest, Sha256};

/// Derives an independent sub-seed for `(tag, index)` from a master seed, so
/// adding or removing one consumer never shifts the streams of the others.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}
