//! Seeded random streams.
//!
//! ChaCha8 is used everywhere because its output is specified and portable,
//! so a seed reproduces the same numbers on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Independent streams carved out of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    RequestFeatures = 2,
    Bandwidth = 3,
    ExpertCosts = 4,
    GateWeights = 5,
    ExpertWeights = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Stream keyed by an arbitrary index inside a named stream, used where a
/// value must depend only on `(seed, index)` regardless of access order.
pub fn indexed_stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (which as u64).rotate_left(32));
    rng.set_stream(index);
    rng
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, std_dev: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std_dev).expect("finite positive standard deviation");
    (0..len).map(|_| normal.sample(rng)).collect()
}
