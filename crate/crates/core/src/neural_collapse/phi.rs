//! Closed form of `φ_{K'}(c) = E[1/(c + F)]`, `F ~ F(2K', 2)`, and its derivative.
//!
//! With `d = c - 1/K'` and `g = cK' - 1 - K' ln(cK')`,
//!
//! ```text
//! φ = c^{K'-1} d^{-K'-1} g / K'  +  Σ_{j=1}^{K'-1} (K'-j)/j · d^{j-K'-1} c^{K'-1-j} / K'
//! ```
//!
//! `1 - cφ` and `E[(1 - w₁)²]` have term sums of their own so that the
//! true-class bias and spread keep relative precision at large `c`.
//!
//! Terms are summed with compensation. When `d^{-K'-1}` or `c^{K'-1}` would
//! leave the floating-point range they are formed in log space and rescaled
//! by the largest term first.
//!
//! Close to `c = 1/K'` with large `K'` the terms cancel beyond repair. There
//! the moments of `w₁ = c/(c + F)` come from series with positive terms in
//! `z = 1 - 1/(cK')`:
//!
//! ```text
//! E[w₁]  = K'  Σ_m z^m / ((K'+m)(K'+m+1))
//! E[w₁²] = 2K' Σ_m (m+1) z^m / ((K'+m)(K'+m+1)(K'+m+2))
//! ```
//!
//! with `φ = E[w₁]/c` and `dφ/dc = -E[w₁²]/c²`.

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// `|cK' - 1|` at or below this is treated as the singular point.
pub const SINGULAR_TOL: f64 = 1e-8;

/// Largest accepted cancellation factor `Σ|t| / |Σt|` of a returned value.
/// Beyond it fewer than about six significant digits survive.
pub const MAX_CANCELLATION: f64 = 1e9;

/// Cancellation factor of the partial fractions above which the series is
/// used instead, keeping about twelve digits on the closed-form route.
pub const SERIES_SWITCH: f64 = 1e4;

fn check_domain(k_prime: usize, c: f64) -> Result<()> {
    if k_prime == 0 {
        return Err(Error::InvalidParam("K' must be at least 1".into()));
    }
    if !c.is_finite() {
        return Err(Error::Overflow("c"));
    }
    let kp = k_prime as f64;
    if c * kp <= 1.0 - SINGULAR_TOL {
        return Err(Error::InvalidParam(format!("c = {c} is not above 1/K' = {}", 1.0 / kp)));
    }
    if (c * kp - 1.0).abs() <= SINGULAR_TOL {
        return Err(Error::NearSingular(format!("|cK' - 1| = {:e}", (c * kp - 1.0).abs())));
    }
    Ok(())
}

/// `u - ln(1 + u)`, series near 0 where the subtraction would cancel.
fn u_minus_ln1p(u: f64) -> f64 {
    if u.abs() < 0.05 {
        // Σ_{m≥2} (-1)^m u^m / m
        let mut term = u * u;
        let mut acc = 0.0;
        for m in 2..40 {
            let t = term / m as f64;
            acc += if m % 2 == 0 { t } else { -t };
            if t.abs() < 1e-18 * acc.abs() {
                break;
            }
            term *= u;
        }
        acc
    } else {
        u - u.ln_1p()
    }
}

struct Parts {
    kp: f64,
    d: f64,
    /// `g = cK' - 1 - K' ln(cK')`
    g: f64,
}

impl Parts {
    fn new(k_prime: usize, c: f64) -> Self {
        let kp = k_prime as f64;
        let u = c * kp - 1.0;
        // u - K' ln(1+u) = (u - ln(1+u)) - (K'-1) ln(1+u)
        let g = u_minus_ln1p(u) - (kp - 1.0) * u.ln_1p();
        Self { kp, d: u / kp, g }
    }
}

/// `coeff · c^{ec} · d^{ed}`.
struct Term {
    coeff: f64,
    ec: i32,
    ed: i32,
}

fn term(terms: &mut Vec<Term>, coeff: f64, ec: i32, ed: i32) {
    if coeff != 0.0 {
        terms.push(Term { coeff, ec, ed });
    }
}

/// Terms allowed in the fallback series before giving up.
const SERIES_MAX_TERMS: usize = 1 << 20;

/// `(E[w₁], E[w₁²])` by the fallback series.
fn series_moments(k_prime: usize, c: f64) -> Result<(f64, f64)> {
    let kp = k_prime as f64;
    let z = 1.0 - 1.0 / (c * kp);
    let mut first = CompensatedSum::default();
    let mut second = CompensatedSum::default();
    let mut zm = 1.0;
    for m in 0..SERIES_MAX_TERMS {
        let mf = m as f64;
        let ab = (kp + mf) * (kp + mf + 1.0);
        let t1 = zm / ab;
        let t2 = (mf + 1.0) * zm / (ab * (kp + mf + 2.0));
        first.add(t1);
        second.add(t2);
        // from here on both term ratios stay below ρ
        let rho = z * (1.0 + 1.0 / (mf + 1.0));
        if rho < 1.0 {
            let tail = rho / (1.0 - rho);
            if t1 * tail <= 1e-17 * first.value() && t2 * tail <= 1e-17 * second.value() {
                return Ok((kp * first.value(), 2.0 * kp * second.value()));
            }
        }
        zm *= z;
    }
    Err(Error::NearSingular(format!(
        "series in z = {z} did not converge in {SERIES_MAX_TERMS} terms"
    )))
}

/// `parts` summed with `Σ|t| / |Σt|` checked against [`MAX_CANCELLATION`].
fn guarded(parts: &[f64], what: &'static str) -> Result<f64> {
    let mut sum = CompensatedSum::default();
    parts.iter().for_each(|&v| sum.add(v));
    let abs: f64 = parts.iter().map(|v| v.abs()).sum();
    let sum = sum.value();
    if abs > MAX_CANCELLATION * sum.abs() {
        return Err(Error::NearSingular(format!(
            "{what}: series terms cancel by a factor of {:.1e}",
            abs / sum.abs()
        )));
    }
    Ok(sum)
}

/// Sum of the terms. Powers are taken directly when they stay in range and
/// in log space otherwise.
fn finish(terms: &[Term], c: f64, d: f64, what: &'static str) -> Result<f64> {
    let direct: Option<Vec<f64>> = terms
        .iter()
        .map(|t| {
            let (pc, pd) = (c.powi(t.ec), d.powi(t.ed));
            let v = t.coeff * pc * pd;
            let ok = pc.is_normal() && pd.is_normal() && v.is_normal();
            ok.then_some(v)
        })
        .collect();
    let (scaled, scale_ln): (Vec<f64>, f64) = match direct {
        Some(v) => (v, 0.0),
        None => {
            let (lc, ld) = (c.ln(), d.ln());
            let logs: Vec<f64> = terms
                .iter()
                .map(|t| t.coeff.abs().ln() + t.ec as f64 * lc + t.ed as f64 * ld)
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = terms
                .iter()
                .zip(&logs)
                .map(|(t, l)| t.coeff.signum() * (l - max).exp())
                .collect();
            (v, max)
        }
    };
    let mut sum = CompensatedSum::default();
    let mut abs = CompensatedSum::default();
    for &v in &scaled {
        sum.add(v);
        abs.add(v.abs());
    }
    let (sum, abs) = (sum.value(), abs.value());
    if abs > SERIES_SWITCH * sum.abs() {
        return Err(Error::NearSingular(format!(
            "{what}: terms cancel by a factor of {:.1e}",
            abs / sum.abs()
        )));
    }
    let v = sum * scale_ln.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(what))
    }
}

/// `φ_{K'}(c)` for `c > 1/K'`.
pub fn phi(k_prime: usize, c: f64) -> Result<f64> {
    check_domain(k_prime, c)?;
    let p = Parts::new(k_prime, c);
    let (kp, k) = (p.kp, k_prime as i32);
    let mut terms = Vec::with_capacity(k_prime);
    term(&mut terms, p.g / kp, k - 1, -k - 1);
    for j in 1..k {
        let jf = j as f64;
        term(&mut terms, (kp - jf) / jf / kp, k - 1 - j, j - k - 1);
    }
    finish(&terms, c, p.d, "phi").or_else(|_| Ok(series_moments(k_prime, c)?.0 / c))
}

/// `dφ_{K'}/dc`, differentiated term by term (`dd/dc = 1`, `dg/dc = K' - K'/c`).
pub fn dphi_dc(k_prime: usize, c: f64) -> Result<f64> {
    check_domain(k_prime, c)?;
    let p = Parts::new(k_prime, c);
    let (kp, k) = (p.kp, k_prime as i32);
    let mut terms = Vec::with_capacity(3 * k_prime);
    // first term (1/K') c^{K'-1} d^{-K'-1} g
    term(&mut terms, (kp - 1.0) * p.g / kp, k - 2, -k - 1);
    term(&mut terms, -(kp + 1.0) * p.g / kp, k - 1, -k - 2);
    // c^{K'-1} d^{-K'-1} (1 - 1/c) = c^{K'-2} d^{-K'-1} (c - 1)
    term(&mut terms, c - 1.0, k - 2, -k - 1);
    for j in 1..k {
        let jf = j as f64;
        let a = (kp - jf) / jf / kp;
        term(&mut terms, a * (jf - kp - 1.0), k - 1 - j, j - k - 2);
        term(&mut terms, a * (kp - 1.0 - jf), k - 2 - j, j - k - 1);
    }
    finish(&terms, c, p.d, "dphi/dc").or_else(|_| Ok(-series_moments(k_prime, c)?.1 / (c * c)))
}

/// Terms of `B = 1 - cφ = E[F/(c+F)]`, the true-class bias before the
/// absolute value. With `g/K' = d - L`, `L = ln(cK')`:
///
/// ```text
/// B = 1 - (c/d)^{K'} + L c^{K'} d^{-K'-1} - Σ_j (K'-j)/(jK') c^{K'-j} d^{j-K'-1}
/// ```
///
/// The leading `1` is absorbed into an `expm1`, so large `c` keeps full
/// relative precision where `1 - cφ` would not.
fn complement_terms(k_prime: usize, c: f64) -> (Parts, Vec<Term>) {
    let p = Parts::new(k_prime, c);
    let (kp, k) = (p.kp, k_prime as i32);
    let l = (c * kp - 1.0).ln_1p();
    let mut terms = Vec::with_capacity(k_prime + 2);
    // 1 - (c/d)^{K'} = -expm1(-K' ln(1 - 1/(cK')))
    term(&mut terms, -(-kp * (-1.0 / (c * kp)).ln_1p()).exp_m1(), 0, 0);
    term(&mut terms, l, k, -k - 1);
    for j in 1..k {
        let jf = j as f64;
        term(&mut terms, -(kp - jf) / jf / kp, k - j, j - k - 1);
    }
    (p, terms)
}

/// `1 - cφ_{K'}(c)`.
pub fn complement(k_prime: usize, c: f64) -> Result<f64> {
    check_domain(k_prime, c)?;
    let (p, terms) = complement_terms(k_prime, c);
    finish(&terms, c, p.d, "1 - c·phi").or_else(|_| {
        let (m1, _) = series_moments(k_prime, c)?;
        guarded(&[1.0, -m1], "1 - c·phi")
    })
}

/// `E[F²/(c+F)²] = B + c·dB/dc`, the second moment of `1 - w₁`.
pub fn complement_second_moment(k_prime: usize, c: f64) -> Result<f64> {
    check_domain(k_prime, c)?;
    let (p, mut terms) = complement_terms(k_prime, c);
    let (kp, k) = (p.kp, k_prime as i32);
    let l = (c * kp - 1.0).ln_1p();
    // c·dB/dc, each power raised by one in c
    term(&mut terms, 2.0 + l * kp, k, -k - 1);
    term(&mut terms, -l * (kp + 1.0), k + 1, -k - 2);
    for j in 1..k {
        let jf = j as f64;
        let a = (kp - jf) / jf / kp;
        term(&mut terms, -a * (kp - jf), k - j, j - k - 1);
        term(&mut terms, -a * (jf - kp - 1.0), k - j + 1, j - k - 2);
    }
    finish(&terms, c, p.d, "E[(1 - w1)^2]").or_else(|_| {
        let (m1, m2) = series_moments(k_prime, c)?;
        guarded(&[1.0, -2.0 * m1, m2], "E[(1 - w1)^2]")
    })
}

/// Richardson-extrapolated central difference of [`phi`] with step `1e-5·c`.
pub fn dphi_dc_richardson(k_prime: usize, c: f64) -> Result<f64> {
    let h = 1e-5 * c;
    let central = |h: f64| -> Result<f64> { Ok((phi(k_prime, c + h)? - phi(k_prime, c - h)?) / (2.0 * h)) };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}
