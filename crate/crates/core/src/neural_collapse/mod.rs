//! The neural-collapse prediction model and its closed-form bias and spread.
//!
//! Members see logits `(sK/K')·e_Y + u` with `-β·u_i ~ Gumbel(μ, β)` i.i.d.,
//! so `e^{u_i} ~ Exp(e^{μ/β})` and the true-class softmax entry is
//! `w₁ = c / (c + F)` with `c = e^{sK/K'}/K'` and `F ~ F(2K', 2)`. The
//! exponential rate cancels, hence everything depends on `(K, s)` only.

mod phi;
mod quadrature;

pub use phi::{
    complement, complement_second_moment, dphi_dc, dphi_dc_richardson, phi, MAX_CANCELLATION, SERIES_SWITCH, SINGULAR_TOL,
};
pub use quadrature::{phi_quadrature, MAX_ERROR as QUADRATURE_MAX_ERROR, TARGET_ERROR as QUADRATURE_TARGET_ERROR};

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};
use crate::numeric::{softmax_in_place, Moments};
use crate::rng::{substream, PRNG_ID};

/// Smallest supported feature scale.
pub const S_MIN: f64 = 0.05;

/// Draws per Monte Carlo substream.
pub const MC_BLOCK: usize = 1 << 16;

/// Smallest accepted Monte Carlo sample size.
pub const MC_MIN_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcParams {
    pub num_classes: usize,
    pub s: f64,
    pub mu: f64,
    pub beta: f64,
    pub seed: u64,
}

impl NcParams {
    /// `μ = 0`, `β = 1`.
    pub fn new(num_classes: usize, s: f64, seed: u64) -> Self {
        Self {
            num_classes,
            s,
            mu: 0.0,
            beta: 1.0,
            seed,
        }
    }

    pub fn k_prime(&self) -> usize {
        self.num_classes - 1
    }

    /// True-class logit offset `sK/K'`.
    pub fn offset(&self) -> f64 {
        self.s * self.num_classes as f64 / self.k_prime() as f64
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidParam(format!("K = {}", self.num_classes)));
        }
        if !(self.s.is_finite() && self.s >= S_MIN) {
            return Err(Error::InvalidParam(format!("s = {} is below {S_MIN}", self.s)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) || !self.mu.is_finite() {
            return Err(Error::InvalidParam(format!("mu = {}, beta = {}", self.mu, self.beta)));
        }
        Ok(())
    }

    /// `c = e^{sK/K'} / K'`.
    pub fn c(&self) -> Result<f64> {
        let c = (self.offset() - (self.k_prime() as f64).ln()).exp();
        if c.is_finite() {
            Ok(c)
        } else {
            Err(Error::Overflow("c"))
        }
    }

    /// One logit-noise vector `u` into `out`.
    fn noise<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let g = Gumbel::new(self.mu, self.beta).expect("validated parameters");
        for o in out.iter_mut() {
            *o = -g.sample(rng) / self.beta;
        }
    }
}

/// `√(K/K')·(I - 11ᵀ/K)`, the simplex equiangular tight frame.
pub fn etf_matrix(k: usize) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("K = {k}")));
    }
    let kf = k as f64;
    let scale = (kf / (kf - 1.0)).sqrt();
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| scale * (if i == j { 1.0 } else { 0.0 } - 1.0 / kf))
                .collect()
        })
        .collect())
}

/// Ensemble of `models` members on `samples` uniformly labelled inputs.
pub fn sample_nc_ensemble(params: &NcParams, samples: usize, models: usize) -> Result<PredictionBundle> {
    params.validate()?;
    if samples == 0 || models == 0 {
        return Err(Error::InvalidParam(format!("n = {samples}, T = {models}")));
    }
    let k = params.num_classes;
    let labels: Vec<u32> = (0..samples)
        .map(|n| substream(params.seed, &[0, n as u64]).random_range(0..k as u32))
        .collect();
    let offset = params.offset();
    let cells: Vec<(Vec<f64>, Vec<f64>)> = (0..models * samples)
        .into_par_iter()
        .map(|cell| {
            let (t, n) = (cell / samples, cell % samples);
            let mut rng = substream(params.seed, &[1, n as u64, t as u64]);
            let mut logits = vec![0.0; k];
            params.noise(&mut rng, &mut logits);
            logits[labels[n] as usize] += offset;
            let mut probs = logits.clone();
            softmax_in_place(&mut probs);
            (probs, logits)
        })
        .collect();
    let mut preds = Vec::with_capacity(models * samples * k);
    let mut logits = Vec::with_capacity(models * samples * k);
    for (p, l) in cells {
        preds.extend(p);
        logits.extend(l);
    }
    Ok(PredictionBundle::new(models, samples, k, preds, labels)?
        .with_logits(logits)?
        .with_metadata("generator", "neural-collapse")
        .with_metadata("seed", params.seed.to_string())
        .with_metadata("prng", PRNG_ID)
        .with_metadata("num_classes", k.to_string())
        .with_metadata("s", params.s.to_string())
        .with_metadata("mu", params.mu.to_string())
        .with_metadata("beta", params.beta.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcClosedForm {
    pub k_prime: usize,
    pub c: f64,
    pub phi: f64,
    pub dphi_dc: f64,
    /// `-(φ' + φ²) = Var[1/(c+F)]`
    pub variance_arg: f64,
    /// `E[w₁] = c·φ`
    pub mean_true_class: f64,
    pub bias_true_class: f64,
    pub std_true_class: f64,
}

/// Closed-form true-class bias `|cφ - 1|` and spread `c·√(-(φ' + φ²))`.
///
/// The spread is evaluated as `√(E[(1-w₁)²] - (1-E[w₁])²)`, the same
/// quantity, because `φ' + φ²` cancels by a factor of about `c` while the
/// complement moments cancel by about `ln c`.
pub fn closed_form_bv(params: &NcParams) -> Result<NcClosedForm> {
    params.validate()?;
    let kp = params.k_prime();
    let c = params.c()?;
    let phi = phi(kp, c)?;
    let dphi_dc = dphi_dc(kp, c)?;
    let b = complement(kp, c)?;
    let second = complement_second_moment(kp, c)?;
    Ok(NcClosedForm {
        k_prime: kp,
        c,
        phi,
        dphi_dc,
        variance_arg: -(dphi_dc + phi * phi),
        mean_true_class: 1.0 - b,
        bias_true_class: b.abs(),
        std_true_class: (second - b * b).max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryForm {
    pub c: f64,
    pub bias: f64,
    pub std: f64,
    /// `bias / std`
    pub ratio: f64,
    /// `ln(bias²) / ln(std²)`
    pub log_ratio: f64,
}

/// Binary-case closed forms at `c = e^{2s}`; both entries share them.
pub fn closed_form_bv_k2(s: f64) -> Result<BinaryForm> {
    if !(s.is_finite() && s >= S_MIN) {
        return Err(Error::NearSingular(format!("s = {s} is below {S_MIN}")));
    }
    binary_form(2.0 * s)
}

/// [`closed_form_bv_k2`] parameterised by `c > 1` directly.
pub fn closed_form_k2_from_c(c: f64) -> Result<BinaryForm> {
    if !(c > 1.0 && c.is_finite()) {
        return Err(Error::InvalidParam(format!("c = {c}")));
    }
    binary_form(c.ln())
}

fn binary_form(ln_c: f64) -> Result<BinaryForm> {
    let cm1 = ln_c.exp_m1();
    if cm1.abs() <= 1e-10 {
        return Err(Error::NearSingular(format!("c - 1 = {cm1:e}")));
    }
    let c = cm1 + 1.0;
    if !c.is_finite() {
        return Err(Error::Overflow("c"));
    }
    // |c ln c - c + 1| / (c-1)² and √(c((c-1)² - c ln²c)) / (c-1)², divided
    // through by (c-1) so that large c stays in range
    let r = c * ln_c / cm1;
    let bias = (r - 1.0).abs() / cm1;
    let inner = 1.0 - c * ln_c * ln_c / (cm1 * cm1);
    let std = (c * inner.max(0.0)).sqrt() / cm1;
    Ok(BinaryForm {
        c,
        bias,
        std,
        ratio: bias / std,
        log_ratio: (bias * bias).ln() / (std * std).ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryEstimate {
    pub mean: f64,
    pub se_mean: f64,
    /// `|mean - 1{entry is the true class}|`, with standard error `se_mean`.
    pub bias: f64,
    pub std: f64,
    pub se_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub params: NcParams,
    pub draws: usize,
    /// Entry 0 is the true class.
    pub entries: Vec<EntryEstimate>,
}

impl McEstimate {
    pub fn true_class(&self) -> &EntryEstimate {
        &self.entries[0]
    }
}

/// Monte Carlo moments of every softmax entry, true class at index 0.
pub fn mc_oracle_bv(params: &NcParams, draws: usize) -> Result<McEstimate> {
    params.validate()?;
    if draws < MC_MIN_DRAWS {
        return Err(Error::InvalidParam(format!(
            "{draws} draws; at least {MC_MIN_DRAWS} required"
        )));
    }
    let k = params.num_classes;
    let offset = params.offset();
    let blocks = draws.div_ceil(MC_BLOCK);
    let per_block: Vec<Vec<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = MC_BLOCK.min(draws - b * MC_BLOCK);
            let mut rng = substream(params.seed, &[2, b as u64]);
            let mut values = vec![vec![0.0; len]; k];
            let mut w = vec![0.0; k];
            for d in 0..len {
                params.noise(&mut rng, &mut w);
                w[0] += offset;
                softmax_in_place(&mut w);
                for (col, v) in values.iter_mut().zip(&w) {
                    col[d] = *v;
                }
            }
            values.iter().map(|v| Moments::of(v)).collect()
        })
        .collect();
    let entries = (0..k)
        .map(|i| {
            let m = per_block.iter().fold(Moments::default(), |acc, b| acc.merge(&b[i]));
            let target = if i == 0 { 1.0 } else { 0.0 };
            EntryEstimate {
                mean: m.mean,
                se_mean: m.se_mean(),
                bias: (m.mean - target).abs(),
                std: m.variance().sqrt(),
                se_std: m.se_std(),
            }
        })
        .collect();
    Ok(McEstimate {
        params: *params,
        draws,
        entries,
    })
}
