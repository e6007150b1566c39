//! Quadrature for `E[1/(c + F)]`, `F ~ F(2K', 2)`, independent of the closed form.
//!
//! The F density is `x^{K'-1} (x + 1/K')^{-K'-1} / (K' Beta(K', 1))` and the
//! normaliser is exactly 1, so the target is
//! `∫_0^∞ x^{K'-1} / ((c + x)(x + 1/K')^{K'+1}) dx`, mapped to `[0, 1)` by
//! `x = t / (1 - t)`.

use crate::error::{Error, Result};

/// Absolute error requested from the integrator.
pub const TARGET_ERROR: f64 = 1e-10;
/// Estimates above this are rejected.
pub const MAX_ERROR: f64 = 1e-8;

fn integrand(k_prime: usize, c: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return if k_prime == 1 { 1.0 / c } else { 0.0 };
    }
    if t >= 1.0 {
        return 0.0;
    }
    let kp = k_prime as f64;
    let one_minus = 1.0 - t;
    let x = t / one_minus;
    let log_density = (kp - 1.0) * x.ln() - (kp + 1.0) * (x + 1.0 / kp).ln();
    log_density.exp() / (c + x) / (one_minus * one_minus)
}

/// `φ_{K'}(c)` by double-exponential quadrature.
pub fn phi_quadrature(k_prime: usize, c: f64) -> Result<f64> {
    if k_prime == 0 {
        return Err(Error::InvalidParam("K' must be at least 1".into()));
    }
    if !(c * k_prime as f64 > 1.0) || !c.is_finite() {
        return Err(Error::InvalidParam(format!("c = {c} is not above 1/K'")));
    }
    let out = quadrature::double_exponential::integrate(|t| integrand(k_prime, c, t), 0.0, 1.0, TARGET_ERROR);
    if !(out.error_estimate <= MAX_ERROR) || !out.integral.is_finite() {
        return Err(Error::QuadratureFailure {
            estimate: out.error_estimate,
        });
    }
    Ok(out.integral)
}
