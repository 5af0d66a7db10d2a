//! Deterministic derivation of independent RNG streams from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an index into a child seed.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn rng(master: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, tag, index))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
