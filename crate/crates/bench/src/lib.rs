//! Shared fixtures for the pipeline benchmarks: the ten-parameter
//! reference model with its true parameter vector and a deterministic
//! dataset generator.

use nalgebra::DVector;
use pqla_core::{simulate_observation, simulate_paths, Dataset, ModelSpec};

pub const SEED: u64 = 42;

pub fn reference_model() -> ModelSpec {
    ModelSpec::sin_exp(10)
}

pub fn reference_theta() -> DVector<f64> {
    DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0])
}

/// One simulated dataset of size `n` from the reference model.
pub fn reference_dataset(n: usize) -> Dataset {
    let model = reference_model();
    let theta = reference_theta();
    let paths = simulate_paths(&model, n, 10, SEED).expect("simulation");
    simulate_observation(&model, &theta, &paths).expect("observation")
}
