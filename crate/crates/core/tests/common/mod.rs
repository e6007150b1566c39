#![allow(dead_code)]

use bva_core::PredictionBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform simplex row from normalised exponentials.
pub fn simplex_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_bundle(seed: u64, t: usize, n: usize, k: usize) -> PredictionBundle {
    let mut r = rng(seed);
    let mut preds = Vec::with_capacity(t * n * k);
    for _ in 0..t * n {
        preds.extend(simplex_row(&mut r, k));
    }
    let labels = (0..n).map(|_| r.random_range(0..k as u32)).collect();
    PredictionBundle::new(t, n, k, preds, labels).unwrap()
}

/// Same prediction row for every model.
pub fn replicated(t: usize, rows: &[Vec<f64>], labels: Vec<u32>) -> PredictionBundle {
    let (n, k) = (rows.len(), rows[0].len());
    let mut preds = Vec::with_capacity(t * n * k);
    for _ in 0..t {
        for row in rows {
            preds.extend_from_slice(row);
        }
    }
    PredictionBundle::new(t, n, k, preds, labels).unwrap()
}

/// Double-double accumulator (TwoSum), about 106 bits of sum precision.
#[derive(Default, Clone, Copy)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn add(&mut self, v: f64) {
        let s = self.hi + v;
        let bb = s - self.hi;
        let err = (self.hi - (s - bb)) + (v - bb);
        let lo = self.lo + err;
        self.hi = s + lo;
        self.lo = lo - (self.hi - s);
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

pub fn dd_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = DoubleDouble::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Proptest configuration with regressions stored next to each test file.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: Some(Box::new(proptest::test_runner::FileFailurePersistence::WithSource(
            "proptest-regressions",
        ))),
        ..proptest::test_runner::Config::default()
    }
}
