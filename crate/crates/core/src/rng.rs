//! Deterministic RNG substreams.
//!
//! Every random draw in the simulator comes from a ChaCha stream keyed by the
//! run seed plus a tuple of tags (for example `(RCS, bs, scan, target)`), so
//! results do not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const TAG_RCS: u64 = 0x5243_5300;
pub const TAG_TX_SYMBOLS: u64 = 0x5458_0000;
pub const TAG_NOISE: u64 = 0x4e4f_4953;
pub const TAG_PERTURB: u64 = 0x5045_5254;
pub const TAG_TRAIN: u64 = 0x5452_4e00;
pub const TAG_CALIBRATE: u64 = 0x4341_4c00;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(stream_seed(base, tags))
}
