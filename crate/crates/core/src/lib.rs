//! Bias-variance analysis for ensembles of probabilistic classifiers.
//!
//! Per-sample MSE and KL decompositions, log-log alignment fits, calibration
//! and disagreement identities, and closed forms under a neural-collapse
//! noise model together with their quadrature and Monte Carlo oracles.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod bundle;
pub mod calibration;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod neural_collapse;
pub mod numeric;
pub mod rng;

pub use alignment::{fit_loglog, FitOptions, RegressionFit, SampleFilter, XConvention};
pub use bundle::PredictionBundle;
pub use calibration::{CalibrationReport, GdeReport, GeneratorConfig, GroupingScheme, Reference};
pub use ensemble::{decompose, Loss, SampleDecomposition};
pub use error::{Error, Result};
pub use io::{read_bundle, write_bundle, BundleManifest};
pub use neural_collapse::NcParams;
