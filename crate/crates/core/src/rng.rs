//! Seeded random number generation.
//!
//! Everything stochastic in this crate draws from Xoshiro256++ seeded
//! explicitly, never from OS entropy, so runs replay bit for bit.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for a root seed.
pub fn seeded(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Independent generator for a (seed, stream) pair. Distinct streams of
/// one root seed are decorrelated by an integer scramble, so restarts,
/// graphs, or layers can each own a stream without sharing state.
pub fn stream(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    let z = mix(seed ^ mix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    Xoshiro256PlusPlus::seed_from_u64(z)
}
