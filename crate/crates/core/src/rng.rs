//! Deterministic random substreams.
//!
//! Every random quantity in a run is drawn from a stream identified by the
//! master seed plus a path of integer tags (replicate index, bootstrap index,
//! ...), so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(master: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tags))
}

/// Tags used for the top-level streams of a run.
pub mod tags {
    pub const POPULATION: u64 = 1;
    pub const REPLICATE: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const CORRELATION: u64 = 4;
    pub const WORLD: u64 = 5;
}
