use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed from a global seed and a path of labels.
///
/// Every random stream in the pipeline (per video, per clip, per run) is keyed
/// this way so results do not depend on iteration order.
pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Short hex digest of arbitrary bytes, used as a content id.
pub fn content_id(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}
