//! Reproducible random-number substreams.
//!
//! Every stochastic call site draws from a ChaCha stream keyed by the run
//! seed plus a path of integers (iteration, sub-step, dataset index, ...).
//! Work can therefore be split across threads without changing any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream key for `seed` and `path`; distinct paths give distinct keys.
pub fn stream_key(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for (depth, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
    }
    h
}

pub fn substream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(stream_key(seed, path))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
