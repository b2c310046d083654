//! Named, seed-derived random streams.
//!
//! Every source of randomness in a run is a separate ChaCha8 stream keyed by
//! the master seed plus a concern label and an index (phase number or request
//! id). Changing how one concern draws numbers never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concern labels. The discriminant is part of the stream key and must never
/// be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    InputLength = 2,
    OutputLength = 3,
    Class = 4,
    Predictor = 5,
    Realized = 6,
    Quality = 7,
    Sweep = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a 64-bit key for `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    splitmix64(b ^ index.wrapping_mul(0x9FB2_1C65_1E98_DF25))
}

pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
