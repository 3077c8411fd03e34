//! Seeded random streams.
//!
//! Every stochastic component draws from a stream keyed by `(seed, a, b)` so
//! that results do not depend on evaluation order or thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, a, b)`.
pub fn stream(seed: u64, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ a) ^ b.rotate_left(17)))
}
