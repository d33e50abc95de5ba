//! Seeded RNG streams. Every sampling entry point takes an explicit RNG so
//! runs are reproducible; disjoint activities use disjoint stream ids.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG on an independent stream of the same seed. Streams never overlap, so
/// e.g. training tasks and held-out tasks cannot leak into each other.
pub fn stream(seed: u64, stream_id: u64) -> Prng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn standard_normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
