//! Deterministic, portable seeding helpers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; used to derive independent stream seeds so that
/// parallel or reordered jobs cannot change results.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from a base seed and a list of coordinates (grid cell
/// indices, epoch numbers, ...).
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    let mut s = mix(seed);
    for &c in coords {
        s = mix(s ^ c.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, coords))
}
