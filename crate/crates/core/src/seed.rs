//! Seed derivation.
//!
//! Every random quantity in the crate descends from a single root seed:
//!
//! * replication `i` of a study uses `derive_seed(root, i)`;
//! * within one seed, coordinate pair `j` (columns `2j` and `2j + 1` of a
//!   d-dimensional noise sample) draws from ChaCha8 stream `j`.
//!
//! The mixing function is SplitMix64, so nearby indices give unrelated seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th child of `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_mul(GOLDEN_GAMMA) ^ 0x5eed))
}

/// Independent generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
