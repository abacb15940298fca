//! Deterministic seed derivation.
//!
//! Every random stream in a run (data synthesis, partitioning, weight
//! init, client selection, poisoned-set choice, contrastive masking) is
//! seeded independently from one master seed, so changing one stream or
//! adding grid cells never perturbs the others.
//!
//! The derivation is fixed: the first 8 little-endian bytes of
//! `SHA-256(master_le_u64 || 0x00 || stream_utf8 || 0x00 || key)` where
//! `key` is either a little-endian u64 index or a UTF-8 cell identifier.

use sha2::{Digest, Sha256};

fn derive(master: u64, stream: &str, key: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(stream.as_bytes());
    hasher.update([0u8]);
    hasher.update(key);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derive a stream seed from a master seed, a stream name, and an index.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    derive(master, stream, &index.to_le_bytes())
}

/// Derive a stream seed keyed by a string (e.g. a grid cell id).
pub fn derive_seed_keyed(master: u64, stream: &str, key: &str) -> u64 {
    derive(master, stream, key.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_across_calls() {
        assert_eq!(derive_seed(42, "select", 7), derive_seed(42, "select", 7));
        assert_eq!(
            derive_seed_keyed(42, "init", "cell-a"),
            derive_seed_keyed(42, "init", "cell-a")
        );
    }

    #[test]
    fn streams_are_independent() {
        let a = derive_seed(42, "select", 0);
        let b = derive_seed(42, "init", 0);
        let c = derive_seed(42, "select", 1);
        let d = derive_seed(43, "select", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn index_and_string_keys_do_not_collide_trivially() {
        // An index key and a string key with the same bytes still differ
        // only if their byte encodings differ; u64 keys are always 8 bytes.
        let by_index = derive_seed(1, "s", 2);
        let by_key = derive_seed_keyed(1, "s", "2");
        assert_ne!(by_index, by_key);
    }
}
