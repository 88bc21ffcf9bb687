//! Seed derivation and RNG construction.
//!
//! Every random choice in the crate flows through a `ChaCha8Rng` built from a
//! seed derived here, so runs are reproducible from a single root seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer. Good avalanche, cheap, stable.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a root seed, a purpose tag, and an index.
///
/// The tag keeps unrelated consumers (sampling, shuffling, model init, ...)
/// on independent streams even when they share the root seed and index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(base ^ fnv1a(tag.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Deterministic RNG from a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable hash of a slice of ids, used for training-data digests.
pub fn digest_ids(ids: &[u64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &id in ids {
        for b in id.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_seed_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "sample", 3), derive_seed(7, "sample", 3));
        assert_ne!(derive_seed(7, "sample", 3), derive_seed(7, "epoch", 3));
        assert_ne!(derive_seed(7, "sample", 3), derive_seed(7, "sample", 4));
        assert_ne!(derive_seed(7, "sample", 3), derive_seed(8, "sample", 3));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = rng_from(42);
        let mut b = rng_from(42);
        for _ in 0..100 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }
}
