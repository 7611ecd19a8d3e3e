//! Seed handling. Every random stream in the crate is a [`ChaCha8Rng`], which is
//! portable across platforms and releases, so a recorded seed reproduces a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Derives an independent child seed from `(master, index)`.
///
/// The mix is the SplitMix64 finalizer applied to a golden-ratio-spaced
/// counter, so consecutive indices land far apart in seed space and the
/// result depends only on the two inputs, never on scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
