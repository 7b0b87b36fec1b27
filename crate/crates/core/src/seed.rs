//! Counter-based seed derivation.
//!
//! Every stochastic task receives `derive(master, stage, index)`, a SplitMix64
//! mix of the three inputs. Tasks never share a generator, so results do not
//! depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stage identifiers used by the pipeline. Stable across releases.
pub mod stage {
    pub const SYNTH: u64 = 1;
    pub const EPOCH_CORRELATION: u64 = 2;
    pub const EPOCH_RETURNS: u64 = 3;
    pub const PAIRS: u64 = 4;
    pub const SAMPLER: u64 = 5;
}

pub fn derive(master: u64, stage: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stage.wrapping_mul(GOLDEN)) ^ index)
}

pub fn rng(master: u64, stage: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stage, index))
}
