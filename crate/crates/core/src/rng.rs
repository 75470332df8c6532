//! Derived random streams.
//!
//! Every random decision is drawn from a ChaCha stream keyed by the run seed
//! plus a small tuple of coordinates (purpose, round, client). Streams never
//! depend on evaluation order, which keeps parallel work reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Distinct tags keep streams for different decisions apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Selection = 1,
    Noise = 2,
    Availability = 3,
    LocalTraining = 4,
    Population = 5,
    Corruption = 6,
    MonteCarlo = 7,
    Instance = 8,
    Model = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with coordinates into a 64-bit key.
pub fn derive_key(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, stream, a, b))
}
