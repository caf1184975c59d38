//! Seed derivation and seeded RNG construction.
//!
//! Every random draw in the crate goes through a ChaCha generator built
//! from an explicit seed, so runs are reproducible byte-for-byte. Distinct
//! consumers (feature init, per-head parameter init, fold shuffling, ...)
//! derive their own streams from a base seed plus a tag path.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed derivation.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a tag path.
///
/// The same `(base, tags)` always yields the same child; different tag
/// paths yield effectively independent streams.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// Seeded generator with a stable byte stream across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
    }

    #[test]
    fn derive_separates_streams() {
        assert_ne!(derive_seed(42, &[1, 2]), derive_seed(42, &[2, 1]));
        assert_ne!(derive_seed(42, &[1]), derive_seed(43, &[1]));
        assert_ne!(derive_seed(42, &[]), derive_seed(42, &[0]));
    }

    #[test]
    fn rng_streams_are_stable() {
        use rand::Rng;
        let mut a = seeded_rng(7);
        let mut b = seeded_rng(7);
        let xa: [u64; 4] = std::array::from_fn(|_| a.random());
        let xb: [u64; 4] = std::array::from_fn(|_| b.random());
        assert_eq!(xa, xb);
    }
}
