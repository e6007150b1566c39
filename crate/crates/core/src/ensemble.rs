//! Per-sample bias, variance and related ensemble statistics.
//!
//! For sample `x` with label `y` and members `h_t`, `t = 1..T`:
//!
//! * mean function `h = (1/T) Σ_t h_t`
//! * entry bias `|h(i) - 1{y = i}|`, entry variance `(1/T) Σ_t (h_t(i) - h(i))²`
//! * risk `(1/T) Σ_t ‖h_t - e_y‖²`, computed directly so that
//!   `risk = bias² + variance` is a checkable identity
//! * uncertainty `1 - (1/T) Σ_t ‖h_t‖²`
//!
//! The label entry of `h_t - e_y` is evaluated as `-Σ_{i≠y} h_t(i)` rather
//! than `h_t(y) - 1`. The two agree on simplex rows, but the first keeps full
//! relative precision when a saturated softmax rounds `h_t(y)` to 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::numeric::{argmax, log_sum_exp, pairwise_sum, pairwise_sum_by};

/// Probability floor applied before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanKind {
    /// Arithmetic mean of member probabilities (MSE decomposition).
    Arithmetic,
    /// Softmax of the mean member log-probability (KL decomposition).
    GeometricSoftmax,
}

/// Ensemble mean prediction `[sample][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFunction {
    pub kind: MeanKind,
    pub num_classes: usize,
    pub values: Vec<f64>,
}

impl MeanFunction {
    pub fn row(&self, sample: usize) -> &[f64] {
        &self.values[sample * self.num_classes..(sample + 1) * self.num_classes]
    }

    pub fn num_samples(&self) -> usize {
        self.values.len() / self.num_classes
    }
}

/// Decomposition of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDecomposition {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub confidence: f64,
    pub correct: bool,
    pub bias: f64,
    pub bias_sq: f64,
    pub entry_bias: Vec<f64>,
    pub variance: f64,
    pub entry_variance: Vec<f64>,
    pub bvg: f64,
    pub risk: f64,
    pub uncertainty: f64,
    pub kl_bias: Option<f64>,
    pub kl_variance: Option<f64>,
}

/// KL (cross-entropy) decomposition of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDecomposition {
    /// `KL(e_y ‖ h̄)` with `h̄` the geometric-softmax mean.
    pub kl_bias: f64,
    /// `-ln Z`, `Z` the partition function of `h̄`.
    pub kl_variance: f64,
    /// `(1/T) Σ_t KL(e_y ‖ h_t)`, evaluated independently.
    pub direct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub prediction: usize,
    pub confidence: f64,
    pub uncertainty: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    Kl,
}

fn check_finite(bundle: &PredictionBundle) -> Result<()> {
    if bundle.predictions().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("predictions"));
    }
    Ok(())
}

fn floored_log_row(
    row: &[f64],
    floor: Option<f64>,
    model: usize,
    sample: usize,
    out: &mut [f64],
) -> Result<()> {
    match floor {
        Some(f) => {
            let mut z = 0.0;
            for (o, &p) in out.iter_mut().zip(row) {
                *o = p.max(f);
                z += *o;
            }
            for o in out.iter_mut() {
                *o = (*o / z).ln();
            }
        }
        None => {
            for (class, (o, &p)) in out.iter_mut().zip(row).enumerate() {
                if p <= 0.0 {
                    return Err(Error::ZeroProbability {
                        model,
                        sample,
                        class,
                    });
                }
                *o = p.ln();
            }
        }
    }
    Ok(())
}

/// Mean member log-probability per class for one sample.
fn mean_log_probs(bundle: &PredictionBundle, sample: usize, floor: Option<f64>) -> Result<Vec<f64>> {
    let (t_count, k) = (bundle.num_models(), bundle.num_classes());
    let mut logs = vec![0.0; t_count * k];
    for t in 0..t_count {
        floored_log_row(bundle.row(t, sample), floor, t, sample, &mut logs[t * k..(t + 1) * k])?;
    }
    Ok((0..k)
        .map(|i| pairwise_sum_by(t_count, &|t| logs[t * k + i]) / t_count as f64)
        .collect())
}

fn arithmetic_mean_row(bundle: &PredictionBundle, sample: usize) -> Vec<f64> {
    let t_count = bundle.num_models();
    (0..bundle.num_classes())
        .map(|i| pairwise_sum_by(t_count, &|t| bundle.row(t, sample)[i]) / t_count as f64)
        .collect()
}

fn uncertainty_of(bundle: &PredictionBundle, sample: usize) -> f64 {
    let t_count = bundle.num_models();
    let sq = pairwise_sum_by(t_count, &|t| {
        let row = bundle.row(t, sample);
        pairwise_sum_by(row.len(), &|i| row[i] * row[i])
    }) / t_count as f64;
    (1.0 - sq).clamp(0.0, 1.0)
}

/// Ensemble mean function of either kind. Rows are renormalised to sum to 1.
pub fn compute_mean_function(bundle: &PredictionBundle, kind: MeanKind) -> Result<MeanFunction> {
    check_finite(bundle)?;
    bundle.require_ensemble()?;
    let k = bundle.num_classes();
    let rows: Vec<Vec<f64>> = (0..bundle.num_samples())
        .into_par_iter()
        .map(|n| -> Result<Vec<f64>> {
            let mut row = match kind {
                MeanKind::Arithmetic => arithmetic_mean_row(bundle, n),
                MeanKind::GeometricSoftmax => {
                    let m = mean_log_probs(bundle, n, Some(PROB_FLOOR))?;
                    let lz = log_sum_exp(&m);
                    m.iter().map(|v| (v - lz).exp()).collect()
                }
            };
            let z = pairwise_sum(&row);
            row.iter_mut().for_each(|v| *v /= z);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(rows.len() * k);
    rows.into_iter().for_each(|r| values.extend(r));
    Ok(MeanFunction {
        kind,
        num_classes: k,
        values,
    })
}

fn decompose_sample(bundle: &PredictionBundle, n: usize) -> SampleDecomposition {
    let (t_count, k) = (bundle.num_models(), bundle.num_classes());
    let y = bundle.label(n);
    let tf = t_count as f64;

    // residual rows h_t - e_y, label entry in complement form
    let mut resid = vec![0.0; t_count * k];
    for t in 0..t_count {
        let row = bundle.row(t, n);
        let r = &mut resid[t * k..(t + 1) * k];
        r.copy_from_slice(row);
        r[y] = -(pairwise_sum(&row[..y]) + pairwise_sum(&row[y + 1..]));
    }

    let mean_resid: Vec<f64> = (0..k)
        .map(|i| pairwise_sum_by(t_count, &|t| resid[t * k + i]) / tf)
        .collect();
    let entry_bias: Vec<f64> = mean_resid.iter().map(|v| v.abs()).collect();
    let entry_variance: Vec<f64> = (0..k)
        .map(|i| {
            let m = mean_resid[i];
            let v = pairwise_sum_by(t_count, &|t| {
                let d = resid[t * k + i] - m;
                d * d
            }) / tf;
            v.max(0.0)
        })
        .collect();
    let bias_sq = pairwise_sum_by(k, &|i| entry_bias[i] * entry_bias[i]);
    let variance = pairwise_sum(&entry_variance);
    let risk = pairwise_sum_by(t_count, &|t| {
        let r = &resid[t * k..(t + 1) * k];
        pairwise_sum_by(k, &|i| r[i] * r[i])
    }) / tf;

    let mean = arithmetic_mean_row(bundle, n);
    let prediction = argmax(&mean);
    SampleDecomposition {
        index: n,
        label: y,
        prediction,
        confidence: mean[prediction],
        correct: prediction == y,
        bias: bias_sq.sqrt(),
        bias_sq,
        entry_bias,
        variance,
        entry_variance,
        bvg: bias_sq - variance,
        risk,
        uncertainty: uncertainty_of(bundle, n),
        kl_bias: None,
        kl_variance: None,
    }
}

/// MSE bias/variance decomposition of every sample.
pub fn decompose_mse(bundle: &PredictionBundle) -> Result<Vec<SampleDecomposition>> {
    check_finite(bundle)?;
    bundle.require_ensemble()?;
    Ok((0..bundle.num_samples())
        .into_par_iter()
        .map(|n| decompose_sample(bundle, n))
        .collect())
}

/// KL decomposition of every sample. `floor = None` disables flooring and
/// turns zero probabilities into [`Error::ZeroProbability`].
pub fn decompose_kl(bundle: &PredictionBundle, floor: Option<f64>) -> Result<Vec<KlDecomposition>> {
    check_finite(bundle)?;
    bundle.require_ensemble()?;
    if let Some(f) = floor {
        if !(f > 0.0 && f < 1.0 / bundle.num_classes() as f64) {
            return Err(Error::InvalidParam(format!("probability floor {f}")));
        }
    }
    (0..bundle.num_samples())
        .into_par_iter()
        .map(|n| {
            let t_count = bundle.num_models();
            let y = bundle.label(n);
            let mean_logs = mean_log_probs(bundle, n, floor)?;
            let log_z = log_sum_exp(&mean_logs);
            let mut row_logs = vec![0.0; bundle.num_classes()];
            let mut nll = Vec::with_capacity(t_count);
            for t in 0..t_count {
                floored_log_row(bundle.row(t, n), floor, t, n, &mut row_logs)?;
                nll.push(-row_logs[y]);
            }
            Ok(KlDecomposition {
                kl_bias: log_z - mean_logs[y],
                kl_variance: -log_z,
                direct: pairwise_sum(&nll) / t_count as f64,
            })
        })
        .collect()
}

/// [`decompose_mse`], with the KL fields filled in for [`Loss::Kl`].
pub fn decompose(bundle: &PredictionBundle, loss: Loss) -> Result<Vec<SampleDecomposition>> {
    let mut out = decompose_mse(bundle)?;
    if loss == Loss::Kl {
        let kl = decompose_kl(bundle, Some(PROB_FLOOR))?;
        for (d, k) in out.iter_mut().zip(kl) {
            d.kl_bias = Some(k.kl_bias);
            d.kl_variance = Some(k.kl_variance);
        }
    }
    Ok(out)
}

/// Prediction, confidence, uncertainty and (when requested) accuracy.
pub fn ensemble_stats(bundle: &PredictionBundle, with_accuracy: bool) -> Result<Vec<EnsembleStats>> {
    check_finite(bundle)?;
    if with_accuracy && bundle.true_conditional().is_none() {
        return Err(Error::MissingTruth);
    }
    Ok((0..bundle.num_samples())
        .into_par_iter()
        .map(|n| {
            let mean = arithmetic_mean_row(bundle, n);
            let prediction = argmax(&mean);
            EnsembleStats {
                prediction,
                confidence: mean[prediction],
                uncertainty: uncertainty_of(bundle, n),
                accuracy: if with_accuracy {
                    bundle.truth_row(n).map(|t| t[prediction])
                } else {
                    None
                },
            }
        })
        .collect())
}

/// Per-member argmax `[model][sample]`, for callers that want per-model
/// correctness instead of the ensemble-mean flag.
pub fn member_predictions(bundle: &PredictionBundle) -> Vec<Vec<usize>> {
    (0..bundle.num_models())
        .map(|t| (0..bundle.num_samples()).map(|n| argmax(bundle.row(t, n))).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(t: usize, n: usize, k: usize, p: Vec<f64>, labels: Vec<u32>) -> PredictionBundle {
        PredictionBundle::new(t, n, k, p, labels).unwrap()
    }

    #[test]
    fn identical_members_have_identity_mean() {
        let b = bundle(3, 1, 2, [0.2, 0.8].repeat(3), vec![1]);
        let m = compute_mean_function(&b, MeanKind::Arithmetic).unwrap();
        assert!((m.row(0)[0] - 0.2).abs() < 1e-15 && (m.row(0)[1] - 0.8).abs() < 1e-15);
        let g = compute_mean_function(&b, MeanKind::GeometricSoftmax).unwrap();
        assert!((g.row(0)[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn opposite_one_hots_average_to_half() {
        let b = bundle(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0]);
        let m = compute_mean_function(&b, MeanKind::Arithmetic).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn single_model_is_degenerate() {
        let b = bundle(1, 1, 2, vec![0.5, 0.5], vec![0]);
        assert!(matches!(decompose_mse(&b), Err(Error::DegenerateEnsemble(1))));
        assert!(matches!(
            compute_mean_function(&b, MeanKind::Arithmetic),
            Err(Error::DegenerateEnsemble(1))
        ));
    }

    #[test]
    fn perfect_ensemble_is_all_zero() {
        let b = bundle(3, 2, 3, [0.0, 1.0, 0.0, 0.0, 0.0, 1.0].repeat(3), vec![1, 2]);
        for d in decompose_mse(&b).unwrap() {
            assert_eq!((d.bias, d.variance, d.risk, d.bvg, d.uncertainty), (0.0, 0.0, 0.0, 0.0, 0.0));
            assert!(d.correct);
        }
    }

    #[test]
    fn opposite_one_hots_split_risk_evenly() {
        let b = bundle(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0]);
        let d = &decompose_mse(&b).unwrap()[0];
        assert!((d.bias_sq - 0.5).abs() < 1e-15);
        assert!((d.variance - 0.5).abs() < 1e-15);
        assert!((d.risk - 1.0).abs() < 1e-15);
        assert!(d.bvg.abs() < 1e-15);
        assert_eq!(d.uncertainty, 0.0);
        assert_eq!(d.prediction, 0);
        assert!(d.correct);
    }

    #[test]
    fn identical_members_have_zero_kl_variance() {
        let b = bundle(4, 1, 3, [0.2, 0.5, 0.3].repeat(4), vec![2]);
        let k = decompose_kl(&b, Some(PROB_FLOOR)).unwrap()[0];
        assert!(k.kl_variance.abs() < 1e-15);
        assert!((k.kl_bias - (-(0.3f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_without_floor() {
        let b = bundle(2, 1, 2, vec![1.0, 0.0, 0.5, 0.5], vec![1]);
        assert!(matches!(
            decompose_kl(&b, None),
            Err(Error::ZeroProbability { model: 0, sample: 0, class: 1 })
        ));
        assert!(decompose_kl(&b, Some(PROB_FLOOR)).is_ok());
    }

    #[test]
    fn stats_argmax_confidence_and_uncertainty() {
        let b = bundle(2, 1, 2, [0.2, 0.8].repeat(2), vec![1]);
        let s = ensemble_stats(&b, false).unwrap()[0];
        assert_eq!(s.prediction, 1);
        assert!((s.confidence - 0.8).abs() < 1e-15);
        assert!(matches!(ensemble_stats(&b, true), Err(Error::MissingTruth)));

        let b = bundle(2, 1, 2, vec![0.5; 4], vec![0]);
        let s = ensemble_stats(&b, false).unwrap()[0];
        assert!((s.uncertainty - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_hot_uncertainty_is_zero_despite_disagreement() {
        let b = bundle(3, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0]);
        let d = &decompose_mse(&b).unwrap()[0];
        assert_eq!(d.uncertainty, 0.0);
        assert!(d.variance > 0.5);
    }

    #[test]
    fn member_argmax_exposed() {
        let b = bundle(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0]);
        assert_eq!(member_predictions(&b), vec![vec![0], vec![1]]);
    }
}
