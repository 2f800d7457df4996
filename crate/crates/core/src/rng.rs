//! Seed plumbing. Every random choice in the crate draws from a ChaCha
//! stream whose seed is a pure function of the run seed and a fixed path of
//! integers, so results never depend on iteration or thread order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Combines a base seed with a path of integers (splitmix64 finalizer per step).
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C908;
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
