//! Log-scale alignment fits, their linear-scale form and residual diagnostics.
//!
//! The alignment model is `ln var_i = slope · ln bias²_i + E + ε_i`, fitted by
//! ordinary least squares. Exponentiating gives `var_i = D · bias²_i^slope · e^{ε_i}`
//! with `D = e^E`; at unit slope this is `var_i = C · bias²_i + η_i · bias²_i`
//! with `C = D · mean(e^ε)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ensemble::SampleDecomposition;
use crate::error::{Error, Result};
use crate::numeric::{pairwise_mean, pairwise_sum, pairwise_sum_by};

/// Minimum number of points for a fit.
pub const MIN_FIT_SAMPLES: usize = 3;

/// Default exclusion floor on bias² and variance: only zeros and subnormals,
/// whose logarithms are unusable, are dropped.
pub const DEFAULT_EXCLUSION_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFilter {
    CorrectOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XConvention {
    /// `x = ln bias²`; perfect alignment has slope 1.
    LogBiasSquared,
    /// `x = ln bias`; slopes are exactly twice the default convention.
    LogBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub filter: SampleFilter,
    pub x_convention: XConvention,
    /// Samples with `bias² < floor` or `variance < floor` are excluded.
    pub floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            filter: SampleFilter::CorrectOnly,
            x_convention: XConvention::LogBiasSquared,
            floor: DEFAULT_EXCLUSION_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_used: usize,
    /// Samples dropped by the filter or the floor.
    pub n_excluded: usize,
    /// Of `n_excluded`, the samples dropped by the floor.
    pub n_below_floor: usize,
    pub residuals: Vec<f64>,
    pub x_convention: XConvention,
    /// Points entering the fit, aligned with `residuals`.
    pub points: Vec<FitPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub c_hat: f64,
    pub d_hat: f64,
    pub eta: Vec<f64>,
}

/// Ordinary least squares `y = intercept + slope · x`.
/// Returns `(slope, intercept, r_squared, residuals)`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, Vec<f64>)> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n,
            need: MIN_FIT_SAMPLES,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("regression inputs"));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateX);
    }
    let xm = pairwise_mean(x);
    let ym = pairwise_mean(y);
    let sxx = pairwise_sum_by(n, &|i| (x[i] - xm) * (x[i] - xm));
    let sxy = pairwise_sum_by(n, &|i| (x[i] - xm) * (y[i] - ym));
    let syy = pairwise_sum_by(n, &|i| (y[i] - ym) * (y[i] - ym));
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut residuals: Vec<f64> = (0..n).map(|i| y[i] - (intercept + slope * x[i])).collect();
    // remove the rounding-level offset so the residual mean is zero to working precision
    let rm = pairwise_mean(&residuals);
    residuals.iter_mut().for_each(|r| *r -= rm);
    let ssr = pairwise_sum_by(n, &|i| residuals[i] * residuals[i]);
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r_squared, residuals))
}

/// Fit the log-log alignment model on the filtered samples.
pub fn fit_loglog(decomps: &[SampleDecomposition], opts: &FitOptions) -> Result<RegressionFit> {
    if !(opts.floor > 0.0) {
        return Err(Error::InvalidParam(format!("exclusion floor {}", opts.floor)));
    }
    let mut points = Vec::new();
    let mut n_below_floor = 0;
    for d in decomps {
        if opts.filter == SampleFilter::CorrectOnly && !d.correct {
            continue;
        }
        if d.bias_sq < opts.floor || d.variance < opts.floor {
            n_below_floor += 1;
            continue;
        }
        let x = match opts.x_convention {
            XConvention::LogBiasSquared => d.bias_sq.ln(),
            XConvention::LogBias => 0.5 * d.bias_sq.ln(),
        };
        points.push(FitPoint {
            index: d.index,
            x,
            y: d.variance.ln(),
            correct: d.correct,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (slope, intercept, r_squared, residuals) = ols(&xs, &ys)?;
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n_used: points.len(),
        n_excluded: decomps.len() - points.len(),
        n_below_floor,
        residuals,
        x_convention: opts.x_convention,
        points,
    })
}

/// Normal Q-Q pairs `(theoretical, sample)` of the standardised residuals,
/// with plotting positions `(r - 0.5) / n`.
pub fn qq_residuals(fit: &RegressionFit) -> Result<Vec<(f64, f64)>> {
    qq_pairs(&fit.residuals)
}

/// [`qq_residuals`] on a raw residual vector.
pub fn qq_pairs(residuals: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mean = pairwise_mean(residuals);
    let dev: Vec<f64> = residuals.iter().map(|r| r - mean).collect();
    let ss = pairwise_sum_by(n, &|i| dev[i] * dev[i]);
    if n < 2 || ss == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sd = (ss / (n - 1) as f64).sqrt();
    let mut z: Vec<f64> = dev.iter().map(|d| d / sd).collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    Ok(z
        .into_iter()
        .enumerate()
        .map(|(r, v)| {
            let p = (r as f64 + 0.5) / n as f64;
            (normal.inverse_cdf(p), v)
        })
        .collect())
}

/// Sample skewness and excess kurtosis of the residuals (moment estimators).
pub fn residual_shape(residuals: &[f64]) -> Result<(f64, f64)> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mean = pairwise_mean(residuals);
    let m = |p: i32| pairwise_sum_by(n, &|i| (residuals[i] - mean).powi(p)) / n as f64;
    let m2 = m(2);
    if m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((m(3) / m2.powf(1.5), m(4) / (m2 * m2) - 3.0))
}

/// Exponentiated constants of a fit.
pub fn linear_constants(fit: &RegressionFit) -> Result<LinearForm> {
    let d_hat = fit.intercept.exp();
    if !d_hat.is_finite() || d_hat == 0.0 {
        return Err(Error::Overflow("exp(intercept)"));
    }
    let e: Vec<f64> = fit.residuals.iter().map(|r| r.exp()).collect();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow("exp(residual)"));
    }
    if e.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean_e = pairwise_mean(&e);
    let eta: Vec<f64> = e.iter().map(|v| v - mean_e).collect();
    Ok(LinearForm {
        c_hat: d_hat * mean_e,
        d_hat,
        eta,
    })
}

/// Fraction of all samples with `bias² ≥ C · variance`.
pub fn bounded_variance_check(decomps: &[SampleDecomposition], c: f64) -> Result<f64> {
    if decomps.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParam(format!("C = {c}")));
    }
    let hits: Vec<f64> = decomps
        .iter()
        .map(|d| if d.bias_sq >= c * d.variance { 1.0 } else { 0.0 })
        .collect();
    Ok(pairwise_sum(&hits) / decomps.len() as f64)
}
