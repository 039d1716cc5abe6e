//! Shared inputs for the benchmarks.

use psde_core::rng;
use psde_core::skorokhod::DrivingPath;
use psde_core::{CoefficientModel, PerturbationParams, SimConfig};

/// A Brownian driving path with `n_points` grid values on `[0, 1]`.
pub fn driving_path(n_points: usize, seed: u64) -> DrivingPath {
    let values = rng::cumulative(&rng::brownian_increments(n_points - 1, 1.0, seed, 0));
    DrivingPath::uniform(1.0 / (n_points - 1) as f64, values).expect("finite, non-empty path")
}

/// The smooth model with both extremes feeding back.
pub fn smooth_setup(n_steps: usize) -> (CoefficientModel, PerturbationParams, SimConfig) {
    let cfg = SimConfig {
        n_steps,
        seed: 1,
        ..Default::default()
    };
    (CoefficientModel::generic_smooth(), PerturbationParams::new(0.3, 0.2).expect("admissible"), cfg)
}
