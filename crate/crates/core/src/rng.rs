//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (splitting, factor initialization, negative
//! sampling, ...) draws from its own ChaCha stream derived from the run seed,
//! a purpose tag and up to two indices. Reordering work never perturbs the
//! numbers a given purpose sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Split = 1,
    Factorize = 2,
    NetworkInit = 3,
    Growth = 4,
    Shuffle = 5,
    Sampling = 6,
    Baseline = 7,
    Synthetic = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a 64-bit sub-seed for `(seed, purpose, a, b)`.
pub fn derive_seed(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, purpose, a, b))
}
