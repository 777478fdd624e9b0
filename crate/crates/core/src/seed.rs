//! Seed fan-out.
//!
//! Every run is driven by a single master seed. Each random component draws
//! from its own ChaCha8 stream whose seed is `splitmix64(master ^ (stream << 56) ^ index)`,
//! so a component can be regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random components of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    Weights = 1,
    Timescales = 2,
    TrainSeries = 3,
    TestSeries = 4,
    SweepTrial = 5,
    Dataset = 6,
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(master ^ ((stream as u64) << 56) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
