//! Content hashing helpers shared by caches, fingerprints and seed derivation.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Incremental fingerprint over length-prefixed fields, so that
/// `["ab", "c"]` and `["a", "bc"]` hash differently.
#[derive(Clone, Default)]
pub struct Fingerprinter {
    hasher: Sha256,
}

impl Fingerprinter {
    pub fn new(domain: &str) -> Self {
        let mut f = Self::default();
        f.field(domain);
        f
    }

    pub fn field(&mut self, value: impl AsRef<[u8]>) -> &mut Self {
        let bytes = value.as_ref();
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

/// Derives a stage seed from the global seed and a path of names.
pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut f = Fingerprinter::new("seed");
    f.field(global.to_le_bytes());
    for p in parts {
        f.field(p);
    }
    let digest = Sha256::digest(f.finish().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// 64-bit FNV-1a, used for feature hashing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_length_prefixed() {
        let mut a = Fingerprinter::new("t");
        a.field("ab").field("c");
        let mut b = Fingerprinter::new("t");
        b.field("a").field("bc");
        assert_ne!(a.finish(), b.finish());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, &["search", "M1"]), derive_seed(7, &["search", "M1"]));
        assert_ne!(derive_seed(7, &["search", "M1"]), derive_seed(7, &["search", "M2"]));
        assert_ne!(derive_seed(7, &["search"]), derive_seed(8, &["search"]));
    }

    #[test]
    fn fnv_known_value() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
