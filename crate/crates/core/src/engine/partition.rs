//! Stable key-to-reducer assignment.
//!
//! The hash is FNV-1a (64-bit) over the four address octets in network order,
//! followed by the MurmurHash3 `fmix64` finalizer:
//!
//! ```text
//! h = 0xcbf29ce484222325
//! for b in octets: h = (h ^ b) * 0x100000001b3          (wrapping)
//! h ^= h >> 33; h *= 0xff51afd7ed558ccd
//! h ^= h >> 33; h *= 0xc4ceb9fe1a85ec53
//! h ^= h >> 33
//! index = h mod reducer_count
//! ```
//!
//! It has no seed, so the assignment is the same in every process and run.

use std::net::Ipv4Addr;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn stable_hash(key: Ipv4Addr) -> u64 {
    let mut h = FNV_OFFSET;
    for b in key.octets() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Reducer index for `key`. Panics if `reducer_count` is zero.
pub fn partition(key: Ipv4Addr, reducer_count: usize) -> usize {
    assert!(reducer_count > 0, "reducer_count must be positive");
    (stable_hash(key) % reducer_count as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_reducer_is_always_zero() {
        for i in 0..1000u32 {
            assert_eq!(partition(Ipv4Addr::from(i.wrapping_mul(2_654_435_761)), 1), 0);
        }
    }

    #[test]
    fn same_key_same_index() {
        let key = Ipv4Addr::new(10, 12, 32, 1);
        let first = partition(key, 7);
        assert!((0..10_000).all(|_| partition(key, 7) == first));
    }

    #[test]
    fn pinned_values() {
        // Frozen so a change to the hash shows up as a test failure.
        assert_eq!(stable_hash(Ipv4Addr::new(0, 0, 0, 0)), 0x4d33_a937_2719_2487);
        assert_eq!(stable_hash(Ipv4Addr::new(10, 12, 32, 1)), 0x3281_4a61_c79e_6902);
    }

    #[test]
    fn random_keys_balance_across_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0u32; 4];
        for _ in 0..10_000 {
            counts[partition(Ipv4Addr::from(rng.random::<u32>()), 4)] += 1;
        }
        for c in counts {
            assert!((1500..=3500).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn sequential_keys_balance_across_four() {
        let mut counts = [0u32; 4];
        for i in 0..10_000u32 {
            counts[partition(Ipv4Addr::from(0x0a00_0000 + i), 4)] += 1;
        }
        for c in counts {
            assert!((1500..=3500).contains(&c), "{counts:?}");
        }
    }
}
