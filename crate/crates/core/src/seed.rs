//! Deterministic seed derivation.
//!
//! Every random draw in a run descends from one master seed. Child seeds are
//! derived by hashing `(parent, stream tag, index)` with SplitMix64 so that
//! streams for different purposes (policy sampling, data generation, model
//! initialization) never overlap and can be consumed in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed for `index` within the stream named `tag`.
pub fn derive(parent: u64, tag: Stream, index: u64) -> u64 {
    let a = splitmix64(parent ^ splitmix64(tag as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Policy = 1,
    Data = 2,
    ModelInit = 3,
    Sample = 4,
    Validation = 5,
    Test = 6,
    PolicyInit = 7,
    Amtm = 8,
    Noise = 9,
    Retrain = 10,
    Iteration = 11,
    Rollout = 12,
    Shuffle = 13,
}
