//! Stable seed derivation.
//!
//! Seeds are derived by hashing labelled parts rather than counting, so
//! adding an item to a grid never changes the seeds of existing items, and
//! values are identical across platforms and processes.

use sha2::{Digest, Sha256};

/// Hashes `parts` (joined with an unambiguous separator) to a `u64`.
pub fn derive_seed<I, S>(parts: I) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Convenience for mixing an integer seed with a label.
pub fn mix(seed: u64, label: &str) -> u64 {
    derive_seed([seed.to_string().as_str(), label])
}
