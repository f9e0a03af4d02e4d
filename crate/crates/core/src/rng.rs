//! Named, seedable random streams.
//!
//! Every random draw in the engine comes from a [`Stream`] derived from a
//! master seed plus a `(purpose, index)` label, so paired experiments can
//! share grading noise while varying selection noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for the sub-stream `(purpose, index)` of `master`.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(fnv1a(purpose.as_bytes())));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(master: u64, purpose: &str, index: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(master, purpose, index))
}

pub fn from_seed(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}
