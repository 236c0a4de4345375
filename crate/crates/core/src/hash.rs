//! Content fingerprints (SHA-256, lowercase hex).

use sha2::{Digest, Sha256};

pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the little-endian encoding of `values`.
pub fn fingerprint_f64(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
