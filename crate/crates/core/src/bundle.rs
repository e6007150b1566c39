//! The in-memory ensemble prediction tensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of member predictions.
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Tolerance on row sums of the true conditional distribution.
pub const TRUTH_SIMPLEX_TOL: f64 = 1e-9;
/// Entries may stray this far outside `[0, 1]` before being rejected.
pub const ENTRY_TOL: f64 = 1e-9;

/// Ensemble predictions `[model][sample][class]` with labels and optional
/// ground truth and logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    num_models: usize,
    num_samples: usize,
    num_classes: usize,
    predictions: Vec<f64>,
    labels: Vec<u32>,
    true_conditional: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl PredictionBundle {
    /// Validates shapes, finiteness, labels and simplex rows. Entries within
    /// [`ENTRY_TOL`] of `[0, 1]` are clamped.
    pub fn new(
        num_models: usize,
        num_samples: usize,
        num_classes: usize,
        mut predictions: Vec<f64>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if num_models == 0 || num_samples == 0 {
            return Err(Error::InvalidParam(
                "bundle needs at least one model and one sample".into(),
            ));
        }
        if num_classes < 2 {
            return Err(Error::InvalidParam(format!(
                "num_classes = {num_classes}; at least 2 required"
            )));
        }
        let cells = num_models * num_samples * num_classes;
        if predictions.len() != cells {
            return Err(Error::SizeMismatch {
                what: "predictions".into(),
                expected: cells,
                found: predictions.len(),
            });
        }
        if labels.len() != num_samples {
            return Err(Error::SizeMismatch {
                what: "labels".into(),
                expected: num_samples,
                found: labels.len(),
            });
        }
        if let Some((sample, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::LabelOutOfRange {
                sample,
                label: label as i64,
                num_classes,
            });
        }
        if predictions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("predictions"));
        }
        for (row_idx, row) in predictions.chunks_mut(num_classes).enumerate() {
            let (model, sample) = (row_idx / num_samples, row_idx % num_samples);
            let sum: f64 = row.iter().sum();
            let out_of_range = row
                .iter()
                .any(|&v| !(-ENTRY_TOL..=1.0 + ENTRY_TOL).contains(&v));
            if out_of_range || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::SimplexViolation { model, sample, sum });
            }
            for v in row.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self {
            num_models,
            num_samples,
            num_classes,
            predictions,
            labels,
            true_conditional: None,
            logits: None,
            metadata: BTreeMap::new(),
        })
    }

    /// Attach the true conditional distribution `[sample][class]`.
    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        let k = self.num_classes;
        if truth.len() != self.num_samples * k {
            return Err(Error::SizeMismatch {
                what: "true_conditional".into(),
                expected: self.num_samples * k,
                found: truth.len(),
            });
        }
        if truth.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("true_conditional"));
        }
        for (sample, row) in truth.chunks(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > TRUTH_SIMPLEX_TOL {
                return Err(Error::SimplexViolation {
                    model: usize::MAX,
                    sample,
                    sum,
                });
            }
        }
        self.true_conditional = Some(truth);
        Ok(self)
    }

    /// Attach raw logits `[model][sample][class]`.
    pub fn with_logits(mut self, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != self.predictions.len() {
            return Err(Error::SizeMismatch {
                what: "logits".into(),
                expected: self.predictions.len(),
                found: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("logits"));
        }
        self.logits = Some(logits);
        Ok(self)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn true_conditional(&self) -> Option<&[f64]> {
        self.true_conditional.as_deref()
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Prediction row of `model` on `sample`.
    pub fn row(&self, model: usize, sample: usize) -> &[f64] {
        let k = self.num_classes;
        let start = (model * self.num_samples + sample) * k;
        &self.predictions[start..start + k]
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample] as usize
    }

    pub fn truth_row(&self, sample: usize) -> Option<&[f64]> {
        let k = self.num_classes;
        self.true_conditional
            .as_ref()
            .map(|t| &t[sample * k..(sample + 1) * k])
    }

    pub(crate) fn require_ensemble(&self) -> Result<()> {
        if self.num_models < 2 {
            Err(Error::DegenerateEnsemble(self.num_models))
        } else {
            Ok(())
        }
    }
}
