//! Deterministic random number streams.
//!
//! Everything stochastic in the crate draws from ChaCha8 streams seeded
//! explicitly. Batch work derives one independent stream per instance from
//! `(base_seed, index)` so results are identical whether instances run
//! serially or across worker threads.

use ndarray::Array3;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Creates the root stream for a given seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of instance `index` of a batch.
///
/// Uses a SplitMix64 finalizer over the combined key, so nearby seeds and
/// indices still land on unrelated streams.
pub fn child_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child stream for instance `index` of a batch.
pub fn child_stream(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(base_seed, index))
}

/// Draws one standard normal sample.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills a `[channels, height, width]` array with standard normal samples
/// in row-major order, so a draw sequence is reproducible from the stream
/// position alone.
pub fn normal_array(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    let mut out = Array3::zeros(shape);
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    out
}
