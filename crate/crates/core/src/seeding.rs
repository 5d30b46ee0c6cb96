//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline comes from a generator seeded by
//! `(global seed, stream labels...)`, so results do not depend on evaluation
//! order or on how work is split across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_for(seed: u64, labels: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, labels))
}

/// Stream labels, kept distinct so derived generators never collide.
pub mod stream {
    pub const BATCH_ORDER: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_SPLIT: u64 = 4;
    pub const TEST_SPLIT: u64 = 5;
    pub const DECODE: u64 = 6;
    pub const INFILL: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: u64 = rng_for(7, &[1, 2]).random();
        let b: u64 = rng_for(7, &[1, 2]).random();
        let c: u64 = rng_for(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
