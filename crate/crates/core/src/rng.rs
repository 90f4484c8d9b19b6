//! Stable seed derivation.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is a
//! hash of the global seed and a small tuple of coordinates (epoch, job,
//! target, ...). Results therefore do not depend on evaluation order or on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep independent streams apart even when coordinates collide.
pub mod stream {
    pub const CONTEXT: u64 = 0x0063_6f6e_7465_7874;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const GATE_NOISE: u64 = 0x006e_6f69_7365;
    pub const INIT: u64 = 0x696e_6974;
    pub const SPLIT: u64 = 0x0073_706c_6974;
    pub const NEGATIVE: u64 = 0x006e_6567;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const EVAL: u64 = 0x6576_616c;
    pub const SYNTH: u64 = 0x0073_796e_7468;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of coordinates into one 64-bit seed.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, parts))
}

/// FNV-1a; used to turn strings (tokens, dataset ids) into seed material.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
