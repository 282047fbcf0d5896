//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is
//! derived from the run's root seed and a component label, so adding or
//! removing one component never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root`, a component label and an index.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label keeps the mapping stable across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn component_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(root, label, index))
}
