//! Hierarchical seed derivation.
//!
//! Every random stream in a run is keyed by a path below the root seed, so
//! changing one component (say the number of Langevin steps) never shifts the
//! draws of another (say data shuffling).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: u64 = 0x494e4954;
pub const SHUFFLE: u64 = 0x53485546;
pub const POSTERIOR: u64 = 0x504f5354;
pub const PRIOR: u64 = 0x5052494f;
pub const REPLAY: u64 = 0x5245504c;
pub const REAL_REPLAY: u64 = 0x5245414c;
pub const INFERENCE: u64 = 0x494e4652;
pub const SUITE: u64 = 0x53554954;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(root), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(root: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(root, path))
}
