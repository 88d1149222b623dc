//! Named random sub-streams derived from a single root seed.
//!
//! Every stochastic step in the crate takes a `u64` seed obtained by mixing
//! the root seed with a path of labels and indices. Sub-streams are stable
//! across platforms and independent of thread scheduling, so a run can be
//! parallelised without changing its output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a label into a seed.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut acc = splitmix64(seed ^ 0xD1B5_4A32_D192_ED03);
    for b in label.bytes() {
        acc = splitmix64(acc ^ u64::from(b));
    }
    splitmix64(acc ^ label.len() as u64)
}

/// Mix an index into a seed.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0x6A09_E667_F3BC_C909) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed sub-stream labels used by the pipeline.
pub mod streams {
    pub const SYNTHESIS: &str = "synthesis";
    pub const SFT: &str = "sft";
    pub const DPO: &str = "dpo";
    pub const PROBES: &str = "probes";
    pub const INIT: &str = "init";
    pub const SELECT: &str = "select";
}
