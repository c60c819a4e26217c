//! Explicit seed streams.
//!
//! Every random draw in the crate comes from a generator seeded by
//! [`derive_seed`], keyed on a base seed plus the identifiers of the call
//! site (client, round, purpose). Results therefore do not depend on the
//! order in which independent work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Anchor = 1,
    Correction = 2,
    Gradient = 3,
    Uplink = 4,
    Schedule = 5,
    AnchorPick = 6,
    Data = 7,
    Init = 8,
    Noise = 9,
    Bench = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base` to obtain an independent child seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed for a (stream, client, round) triple.
pub fn stream_seed(base: u64, stream: Stream, client: u64, round: u64) -> u64 {
    derive_seed(base, &[stream as u64, client, round])
}

pub fn rng_from(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
