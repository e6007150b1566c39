//! Fixtures shared by the benchmarks.

use bva_core::calibration::{generate_calibrated_ensemble, GeneratorConfig};
use bva_core::PredictionBundle;

/// Dirichlet-calibrated ensemble of the given shape with a fixed seed.
pub fn calibrated_bundle(num_models: usize, num_samples: usize, num_classes: usize) -> PredictionBundle {
    generate_calibrated_ensemble(&GeneratorConfig {
        num_classes,
        num_samples,
        num_models,
        alpha: 1.0,
        kappa: 10.0,
        one_hot: false,
        seed: 20_240_601,
    })
    .expect("valid generator config")
}
