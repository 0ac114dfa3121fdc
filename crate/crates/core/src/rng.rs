//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha stream so stages stay
//! reproducible independently of each other and of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag; distinct tags never share a keystream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    KMeans = 1,
    Subsample = 2,
    Priors = 3,
    Gibbs = 4,
    Synth = 5,
}

/// Generator for `(seed ^ index, purpose)`. `index` is usually a cluster id.
pub fn stream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
    rng.set_stream(purpose as u64);
    rng
}
