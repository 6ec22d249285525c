//! Seeded streams and the seed-splitting rule.
//!
//! A replicate seed is `splitmix64` folded over
//! `(master, scenario, grid_index, replicate)` in that order:
//! `h = mix(master); h = mix(h ^ scenario); h = mix(h ^ grid); seed = mix(h ^ rep)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, scenario: u64, grid_index: u64, replicate: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ scenario);
    h = splitmix64(h ^ grid_index);
    splitmix64(h ^ replicate)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
