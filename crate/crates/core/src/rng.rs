//! Deterministic random streams.
//!
//! Every randomized routine takes a [`SynthRng`]; parallel work uses
//! [`stream`] to derive independent generators from one seed. ChaCha8 output
//! is stable across releases of `rand_chacha`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SynthRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` of `seed`.
pub fn stream(seed: u64, index: u64) -> SynthRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
