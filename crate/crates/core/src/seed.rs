//! Seed derivation for reproducible runs.
//!
//! Every random stream in the crate (weight init, samplers, fold splits,
//! synthetic audio, crop selection) is a `ChaCha8Rng` seeded from a master
//! seed mixed with a stream tag and indices. ChaCha output is stable across
//! platforms and crate versions, unlike `StdRng`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of integer parts into a new seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags so independent consumers of one master seed never collide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const INIT_AUX: u64 = 2;
    pub const LOADER: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const CROP: u64 = 6;
    pub const RUN: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
