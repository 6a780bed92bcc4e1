//! Seeded random streams.
//!
//! Every stochastic step (splits, label sampling, batch draws, neighbor
//! draws, weight init) uses [`ChaCha8Rng`], whose output is specified
//! independently of platform and word size. Sub-streams are derived by
//! hashing a tuple of integers with SplitMix64 so that the stream for a
//! given `(seed, batch, row)` does not depend on processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of integers into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_0F_A11_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(parts: &[u64]) -> Stream {
    stream(derive_seed(parts))
}
