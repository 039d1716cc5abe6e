//! Seeded Brownian drivers.
//!
//! Every path draws from its own ChaCha8 stream: the generator is keyed by
//! the master seed and the stream id is the path index. Streams are
//! counter-based, so the increments of path `k` do not depend on how many
//! other paths were generated or in which order. Auxiliary draws for a path
//! (Brownian-bridge extremes) come from stream `path_index | AUX_STREAM`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const AUX_STREAM: u64 = 1 << 63;

/// Generator for the Gaussian increments of one path.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index & !AUX_STREAM);
    rng
}

/// Generator for the auxiliary uniforms of one path.
pub fn aux_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index | AUX_STREAM);
    rng
}

/// `n_steps` independent `N(0, horizon / n_steps)` increments for stream 0.
pub fn brownian_driver(n_steps: usize, horizon: f64, seed: u64) -> Vec<f64> {
    brownian_increments(n_steps, horizon, seed, 0)
}

/// Increments of path `path_index` under master seed `seed`.
pub fn brownian_increments(n_steps: usize, horizon: f64, seed: u64, path_index: u64) -> Vec<f64> {
    let sd = (horizon / n_steps as f64).sqrt();
    let mut rng = path_rng(seed, path_index);
    (0..n_steps)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Sums consecutive blocks of `factor` increments: the same Brownian path
/// observed on a grid `factor` times coarser.
pub fn aggregate_increments(fine: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1 && fine.len().is_multiple_of(factor), "grid sizes must nest");
    fine.chunks(factor).map(|c| c.iter().sum()).collect()
}

/// Brownian values `W_0 = 0, W_1, ..., W_n` from increments.
pub fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    w.push(acc);
    for dw in increments {
        acc += dw;
        w.push(acc);
    }
    w
}

/// Uniform on `(0, 1]`, safe to take a logarithm of.
#[inline]
pub fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
