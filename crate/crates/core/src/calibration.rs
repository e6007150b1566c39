//! Grouped calibration errors, the BVG/uncertainty gap bound, GDE metrics and
//! a generator of calibrated synthetic ensembles.
//!
//! A grouping scheme partitions samples separately for each class `i` by a
//! function of `h(i|x)`: itself (pre-image), its bin `⌈M·h(i|x)⌉`, or the
//! sample index. For a group `g` the residual is the group mean of
//! `Δ(i|x) = h(i|x) - r(i|x)`, where the reference `r` is the label indicator
//! on empirical data or the true conditional on synthetic data.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::ensemble::{compute_mean_function, decompose_mse, MeanKind};
use crate::error::{Error, Result};
use crate::numeric::{argmax, mean_and_sd, pairwise_mean, pairwise_sum, pairwise_sum_by, CompensatedSum};
use crate::rng::{categorical, dirichlet_into, substream, PRNG_ID};

/// `M·p` within this distance of an integer is treated as that integer, so
/// that decimal fixtures such as `0.3` land on their nominal bin edge.
pub const BIN_EDGE_SNAP: f64 = 1e-9;

/// Bootstrap resamples used for the slack on empirical bound checks.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupingScheme {
    Sample,
    Preimage,
    Bin { num_bins: usize },
}

impl GroupingScheme {
    fn key(&self, value: f64, sample: usize) -> u64 {
        match *self {
            GroupingScheme::Sample => sample as u64,
            GroupingScheme::Preimage => (value + 0.0).to_bits(),
            GroupingScheme::Bin { num_bins } => bin_index(value, num_bins) as u64,
        }
    }

    fn key_value(&self, key: u64) -> f64 {
        match self {
            GroupingScheme::Preimage => f64::from_bits(key),
            _ => key as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        if let GroupingScheme::Bin { num_bins: 0 } = self {
            return Err(Error::InvalidParam("num_bins must be positive".into()));
        }
        Ok(())
    }
}

/// Bin `⌈M·p⌉ ∈ {1..M}` of a probability; `p = 0` goes to bin 1.
pub fn bin_index(p: f64, num_bins: usize) -> usize {
    let mp = p * num_bins as f64;
    let r = mp.round();
    let j = if (mp - r).abs() <= BIN_EDGE_SNAP { r } else { mp.ceil() };
    (j as usize).clamp(1, num_bins)
}

/// What `h(i|x)` is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Observed label indicator `1{y = i}`.
    Labels,
    /// Stored true conditional `P(i|x)`.
    Truth,
    /// The ensemble mean itself, making every sample exactly calibrated.
    MeanFunction,
}

impl Reference {
    /// Truth for the sample scheme, labels otherwise.
    pub fn default_for(scheme: GroupingScheme) -> Self {
        match scheme {
            GroupingScheme::Sample => Reference::Truth,
            _ => Reference::Labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    /// Bin index, pre-image value or sample index.
    pub key: f64,
    pub mass: f64,
    pub mean_value: f64,
    pub mean_reference: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub scheme: GroupingScheme,
    pub reference: Reference,
    pub ece: f64,
    pub cce: Vec<f64>,
    pub cwce: f64,
    /// Groups of the predicted-class confidence (value = conf, reference = acc).
    pub confidence_groups: Vec<GroupStat>,
    /// Per class, groups of `h(i|·)`.
    pub class_groups: Vec<Vec<GroupStat>>,
    pub bvg_mean: f64,
    pub uncertainty_mean: f64,
    pub lhs_gap: f64,
    pub rhs_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of `lhs_gap - rhs_bound`.
    pub diff: f64,
    pub resamples: usize,
}

/// Per-sample inputs shared by every grouped statistic.
struct Prepared {
    n: usize,
    k: usize,
    h: Vec<f64>,
    r: Vec<f64>,
    pred: Vec<usize>,
    /// `E_{Y|X}[BVG]` (or the observed BVG under label reference).
    bvg: Vec<f64>,
    unc: Vec<f64>,
}

impl Prepared {
    fn new(bundle: &PredictionBundle, reference: Reference) -> Result<Self> {
        let (n, k) = (bundle.num_samples(), bundle.num_classes());
        let mean = compute_mean_function(bundle, MeanKind::Arithmetic)?;
        let decomps = decompose_mse(bundle)?;
        let h = mean.values;
        let r = match reference {
            Reference::Labels => {
                let mut r = vec![0.0; n * k];
                for s in 0..n {
                    r[s * k + bundle.label(s)] = 1.0;
                }
                r
            }
            Reference::Truth => bundle.true_conditional().ok_or(Error::MissingTruth)?.to_vec(),
            Reference::MeanFunction => h.clone(),
        };
        let bvg = match reference {
            Reference::Labels => decomps.iter().map(|d| d.bvg).collect(),
            // E_{Y|X} ‖h - e_Y‖² = ‖h‖² - 2 Σ_y P(y) h(y) + 1
            _ => (0..n)
                .map(|s| {
                    let hs = &h[s * k..(s + 1) * k];
                    let rs = &r[s * k..(s + 1) * k];
                    let hh = pairwise_sum_by(k, &|i| hs[i] * hs[i]);
                    let rh = pairwise_sum_by(k, &|i| rs[i] * hs[i]);
                    hh - 2.0 * rh + 1.0 - decomps[s].variance
                })
                .collect(),
        };
        Ok(Self {
            n,
            k,
            pred: (0..n).map(|s| argmax(&h[s * k..(s + 1) * k])).collect(),
            unc: decomps.iter().map(|d| d.uncertainty).collect(),
            h,
            r,
            bvg,
        })
    }

    fn h(&self, s: usize, i: usize) -> f64 {
        self.h[s * self.k + i]
    }

    fn r(&self, s: usize, i: usize) -> f64 {
        self.r[s * self.k + i]
    }
}

#[derive(Default)]
struct GroupAcc {
    w: f64,
    value: CompensatedSum,
    reference: CompensatedSum,
    resid: CompensatedSum,
}

/// `Σ_g mass_g · |mean_g(resid)|` with optional per-sample multiplicities.
fn grouped(
    scheme: GroupingScheme,
    n: usize,
    weights: Option<&[f64]>,
    keyed: &impl Fn(usize) -> (f64, f64, f64),
    with_stats: bool,
) -> (f64, Vec<GroupStat>) {
    let w_of = |s: usize| weights.map_or(1.0, |w| w[s]);
    let total = pairwise_sum_by(n, &w_of);
    let mut groups: BTreeMap<u64, GroupAcc> = BTreeMap::new();
    for s in 0..n {
        let w = w_of(s);
        if w == 0.0 {
            continue;
        }
        let (value, reference, resid) = keyed(s);
        let g = groups.entry(scheme.key(value, s)).or_default();
        g.w += w;
        g.value.add(w * value);
        g.reference.add(w * reference);
        g.resid.add(w * resid);
    }
    let mut abs = CompensatedSum::default();
    let mut stats = Vec::new();
    for (key, g) in groups {
        abs.add(g.resid.value().abs() / total);
        if with_stats {
            stats.push(GroupStat {
                key: scheme.key_value(key),
                mass: g.w / total,
                mean_value: g.value.value() / g.w,
                mean_reference: g.reference.value() / g.w,
                residual: g.resid.value() / g.w,
            });
        }
    }
    (abs.value(), stats)
}

struct Errors {
    ece: f64,
    cce: Vec<f64>,
    lhs: f64,
    confidence_groups: Vec<GroupStat>,
    class_groups: Vec<Vec<GroupStat>>,
}

fn errors(p: &Prepared, scheme: GroupingScheme, weights: Option<&[f64]>, with_stats: bool) -> Errors {
    let conf = |s: usize| {
        let c = p.h(s, p.pred[s]);
        let a = p.r(s, p.pred[s]);
        (c, a, c - a)
    };
    let (ece, confidence_groups) = grouped(scheme, p.n, weights, &conf, with_stats);
    let (cce, class_groups): (Vec<f64>, Vec<Vec<GroupStat>>) = (0..p.k)
        .map(|i| {
            let f = |s: usize| {
                let (v, r) = (p.h(s, i), p.r(s, i));
                (v, r, v - r)
            };
            grouped(scheme, p.n, weights, &f, with_stats)
        })
        .unzip();
    // the gap is grouped by the confidence group of the predicted class
    let gap = |s: usize| (p.h(s, p.pred[s]), 0.0, p.bvg[s] - p.unc[s]);
    let (lhs, _) = grouped(scheme, p.n, weights, &gap, false);
    Errors {
        ece,
        cce,
        lhs,
        confidence_groups,
        class_groups,
    }
}

/// Full calibration report under an explicit reference.
pub fn calibration_report(
    bundle: &PredictionBundle,
    scheme: GroupingScheme,
    reference: Reference,
) -> Result<CalibrationReport> {
    scheme.validate()?;
    let p = Prepared::new(bundle, reference)?;
    let e = errors(&p, scheme, None, true);
    let cwce = pairwise_sum(&e.cce);
    Ok(CalibrationReport {
        scheme,
        reference,
        ece: e.ece,
        cwce,
        cce: e.cce,
        confidence_groups: e.confidence_groups,
        class_groups: e.class_groups,
        bvg_mean: pairwise_mean(&p.bvg),
        uncertainty_mean: pairwise_mean(&p.unc),
        lhs_gap: e.lhs,
        rhs_bound: 2.0 * cwce,
    })
}

/// Calibration report with the scheme's default reference.
pub fn binned_calibration(bundle: &PredictionBundle, scheme: GroupingScheme) -> Result<CalibrationReport> {
    calibration_report(bundle, scheme, Reference::default_for(scheme))
}

/// `(lhs_gap, rhs_bound)` with the scheme's default reference.
pub fn bvg_uncertainty_gap(bundle: &PredictionBundle, scheme: GroupingScheme) -> Result<(f64, f64)> {
    let r = binned_calibration(bundle, scheme)?;
    Ok((r.lhs_gap, r.rhs_bound))
}

/// Per-sample `E_{Y|X}[BVG]` under `reference` (the observed BVG for labels).
pub fn expected_bvg(bundle: &PredictionBundle, reference: Reference) -> Result<Vec<f64>> {
    Ok(Prepared::new(bundle, reference)?.bvg)
}

/// Bootstrap standard errors of `lhs_gap`, `rhs_bound` and their difference.
pub fn gap_bootstrap_se(
    bundle: &PredictionBundle,
    scheme: GroupingScheme,
    reference: Reference,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapSe> {
    scheme.validate()?;
    if resamples < 2 {
        return Err(Error::InvalidParam(format!("{resamples} bootstrap resamples")));
    }
    let p = Prepared::new(bundle, reference)?;
    let stats: Vec<(f64, f64)> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, &[b as u64]);
            let mut w = vec![0.0; p.n];
            for _ in 0..p.n {
                w[rng.random_range(0..p.n)] += 1.0;
            }
            let e = errors(&p, scheme, Some(&w), false);
            (e.lhs, 2.0 * pairwise_sum(&e.cce))
        })
        .collect();
    let lhs: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let rhs: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let diff: Vec<f64> = stats.iter().map(|s| s.0 - s.1).collect();
    Ok(BootstrapSe {
        lhs: mean_and_sd(&lhs).1,
        rhs: mean_and_sd(&rhs).1,
        diff: mean_and_sd(&diff).1,
        resamples,
    })
}

/// Mean of `E_{Y|X}[β(c) - ς(c)]` for the predicted class `c` over samples
/// whose confidence is at least `min_conf`, using the stored truth.
/// Returns the mean and the number of samples in the group.
pub fn entrywise_bias_std_gap(bundle: &PredictionBundle, min_conf: f64) -> Result<(f64, usize)> {
    let truth = bundle.true_conditional().ok_or(Error::MissingTruth)?;
    let k = bundle.num_classes();
    let decomps = decompose_mse(bundle)?;
    let mean = compute_mean_function(bundle, MeanKind::Arithmetic)?;
    let vals: Vec<f64> = decomps
        .iter()
        .filter(|d| d.confidence >= min_conf)
        .map(|d| {
            let c = d.prediction;
            let (h, p) = (mean.row(d.index)[c], truth[d.index * k + c]);
            p * (1.0 - h) + (1.0 - p) * h - d.entry_variance[c].sqrt()
        })
        .collect();
    if vals.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    Ok((pairwise_mean(&vals), vals.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdeReport {
    pub disagreement: f64,
    pub test_error: f64,
    pub gde_gap: f64,
    pub cace: Option<f64>,
    pub mean_variance: f64,
    pub mean_risk: f64,
    /// Standard error of the per-sample `disagreement - test_error` mean.
    pub mc_se: f64,
}

/// Member class of every one-hot row `[model][sample]`.
fn one_hot_classes(bundle: &PredictionBundle) -> Result<Vec<usize>> {
    const TOL: f64 = 1e-9;
    let (t_count, n) = (bundle.num_models(), bundle.num_samples());
    let mut out = Vec::with_capacity(t_count * n);
    for t in 0..t_count {
        for s in 0..n {
            let row = bundle.row(t, s);
            let ones = row.iter().filter(|&&v| v >= 1.0 - TOL).count();
            let zeros = row.iter().filter(|&&v| v <= TOL).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::OneHotRequired { model: t, sample: s });
            }
            out.push(argmax(row));
        }
    }
    Ok(out)
}

/// Disagreement, test error and CACE of a one-hot ensemble.
pub fn gde_metrics(bundle: &PredictionBundle) -> Result<GdeReport> {
    let classes = one_hot_classes(bundle)?;
    let decomps = decompose_mse(bundle)?;
    let (t_count, n, k) = (bundle.num_models(), bundle.num_samples(), bundle.num_classes());
    let tf = t_count as f64;
    let mut dis = Vec::with_capacity(n);
    let mut err = Vec::with_capacity(n);
    let mut counts = vec![0usize; k];
    for s in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        for t in 0..t_count {
            counts[classes[t * n + s]] += 1;
        }
        // ordered pairs (t, t') with equal classes number Σ_k m_k²
        let same = pairwise_sum_by(k, &|i| (counts[i] * counts[i]) as f64);
        dis.push(1.0 - same / (tf * tf));
        err.push(1.0 - counts[bundle.label(s)] as f64 / tf);
    }
    let disagreement = pairwise_mean(&dis);
    let test_error = pairwise_mean(&err);
    let gap: Vec<f64> = dis.iter().zip(&err).map(|(d, e)| d - e).collect();
    let (_, sd) = mean_and_sd(&gap);
    let cace = match bundle.true_conditional() {
        Some(_) => Some(cace(bundle)?),
        None => None,
    };
    Ok(GdeReport {
        disagreement,
        test_error,
        gde_gap: (disagreement - test_error).abs(),
        cace,
        mean_variance: pairwise_mean(&decomps.iter().map(|d| d.variance).collect::<Vec<_>>()),
        mean_risk: pairwise_mean(&decomps.iter().map(|d| d.risk).collect::<Vec<_>>()),
        mc_se: sd / (n as f64).sqrt(),
    })
}

/// Class-aggregated calibration error over the attained values `q` of
/// `h(i|·)`, grouped by exact value: `Σ_q |Σ_i P(Y=i, h(i|X)=q) - q Σ_i P(h(i|X)=q)|`.
pub fn cace(bundle: &PredictionBundle) -> Result<f64> {
    let truth = bundle.true_conditional().ok_or(Error::MissingTruth)?;
    let mean = compute_mean_function(bundle, MeanKind::Arithmetic)?;
    let (n, k) = (bundle.num_samples(), bundle.num_classes());
    let mut groups: BTreeMap<u64, CompensatedSum> = BTreeMap::new();
    for s in 0..n {
        for i in 0..k {
            let q = mean.row(s)[i];
            groups.entry((q + 0.0).to_bits()).or_default().add(truth[s * k + i] - q);
        }
    }
    let mut total = CompensatedSum::default();
    for acc in groups.values() {
        total.add(acc.value().abs() / n as f64);
    }
    Ok(total.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub num_samples: usize,
    pub num_models: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub one_hot: bool,
    pub seed: u64,
}

/// Synthetic ensemble whose members have mean `p_x` in expectation, with
/// `p_x ~ Dirichlet(α·1)` stored as the true conditional and `Y ~ p_x`.
pub fn generate_calibrated_ensemble(cfg: &GeneratorConfig) -> Result<PredictionBundle> {
    let GeneratorConfig {
        num_classes: k,
        num_samples: n,
        num_models: t_count,
        alpha,
        kappa,
        one_hot,
        seed,
    } = *cfg;
    if k < 2 || n < 1 || t_count < 2 {
        return Err(Error::InvalidParam(format!("K = {k}, N = {n}, T = {t_count}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParam(format!("alpha = {alpha}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParam(format!("kappa = {kappa}")));
    }
    let per_sample: Vec<(Vec<f64>, u32, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, &[0, s as u64]);
            let mut p = vec![0.0; k];
            dirichlet_into(&mut rng, &vec![alpha; k], &mut p);
            let label = categorical(&mut rng, &p) as u32;
            let mut members = vec![0.0; t_count * k];
            let conc: Vec<f64> = p.iter().map(|v| (kappa * v).max(f64::MIN_POSITIVE)).collect();
            for t in 0..t_count {
                let mut rng = substream(seed, &[1, s as u64, t as u64]);
                let row = &mut members[t * k..(t + 1) * k];
                if one_hot {
                    row[categorical(&mut rng, &p)] = 1.0;
                } else {
                    dirichlet_into(&mut rng, &conc, row);
                }
            }
            (p, label, members)
        })
        .collect();
    let mut preds = vec![0.0; t_count * n * k];
    let mut truth = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for (s, (p, label, members)) in per_sample.into_iter().enumerate() {
        for t in 0..t_count {
            let dst = (t * n + s) * k;
            preds[dst..dst + k].copy_from_slice(&members[t * k..(t + 1) * k]);
        }
        truth.extend(p);
        labels.push(label);
    }
    Ok(PredictionBundle::new(t_count, n, k, preds, labels)?
        .with_truth(truth)?
        .with_metadata("generator", "calibrated-dirichlet")
        .with_metadata("seed", seed.to_string())
        .with_metadata("prng", PRNG_ID)
        .with_metadata("alpha", alpha.to_string())
        .with_metadata("kappa", kappa.to_string())
        .with_metadata("one_hot", one_hot.to_string()))
}
