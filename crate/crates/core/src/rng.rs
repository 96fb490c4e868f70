//! Seed derivation.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is
//! derived from a root seed and a named stream, so that any sub-experiment can
//! be reproduced in isolation and parallel evaluation order never matters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed of the stream `name` under `root`.
pub fn derive(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(name.as_bytes())))
}

/// Seed of the `index`-th element of stream `name` under `root`.
pub fn derive_indexed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(derive(root, name) ^ splitmix64(index.wrapping_add(1)))
}

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
