//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line with its
//! measured values to stdout and then asserts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use bva_core::alignment::{bounded_variance_check, fit_loglog, linear_constants, FitOptions};
use bva_core::calibration::{
    calibration_report, expected_bvg, gap_bootstrap_se, gde_metrics, generate_calibrated_ensemble,
    GeneratorConfig, GroupingScheme, Reference, BOOTSTRAP_RESAMPLES,
};
use bva_core::ensemble::{decompose, decompose_kl, decompose_mse, Loss};
use bva_core::neural_collapse::{
    closed_form_bv, closed_form_bv_k2, closed_form_k2_from_c, mc_oracle_bv, phi_quadrature, sample_nc_ensemble,
    NcParams,
};
use bva_core::PredictionBundle;

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("\n{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

#[test]
fn decomposition_identity() {
    let start = Instant::now();
    let (mut worst_id, mut worst_bias, mut worst_var) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100u64 {
        let k = if i % 2 == 0 { 2 } else { 10 };
        let t = if (i / 2) % 2 == 0 { 2 } else { 50 };
        let b = common::random_bundle(1_000 + i, t, 1000, k);
        for d in decompose_mse(&b).unwrap() {
            worst_id = worst_id.max((d.risk - d.bias_sq - d.variance).abs());
            let norm = common::dd_sum(d.entry_bias.iter().map(|e| e * e)).sqrt();
            worst_bias = worst_bias.max((d.bias - norm).abs());
            worst_var = worst_var.max((d.variance - common::dd_sum(d.entry_variance.iter().copied())).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_id <= 1e-10 && worst_bias <= 1e-12 && worst_var <= 1e-12 && within(elapsed, 10.0);
    verdict(
        "decomposition_identity",
        pass,
        format!(
            "max |risk-bias²-var| {worst_id:.1e} (≤1e-10), entry/total bias {worst_bias:.1e} var {worst_var:.1e} (≤1e-12), {:.2}s (<10s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// K = 2, two members `(ε, 1-ε)` and `(1-ε, ε)`, one sample per label.
fn kl_family(eps: f64) -> PredictionBundle {
    PredictionBundle::new(2, 2, 2, vec![eps, 1.0 - eps, eps, 1.0 - eps, 1.0 - eps, eps, 1.0 - eps, eps], vec![0, 1])
        .unwrap()
}

#[test]
fn kl_counterexample() {
    let grid = [0.05, 0.1, 0.25, 0.4, 0.5];
    let mut bias_err = 0.0f64;
    let mut identity_err = 0.0f64;
    let mut variances = Vec::new();
    for &eps in &grid {
        let b = kl_family(eps);
        let kl = decompose_kl(&b, Some(1e-12)).unwrap();
        for r in &kl {
            bias_err = bias_err.max((r.kl_bias - 2f64.ln()).abs());
            identity_err = identity_err.max((r.kl_bias + r.kl_variance - r.direct).abs());
        }
        variances.push(kl[0].kl_variance);
    }
    let v_half = variances[4];
    // the family's own closed form, -ln 2 - ½ ln(ε(1-ε))
    let closed = |e: f64| -(2f64.ln()) - 0.5 * (e * (1.0 - e)).ln();
    let closed_err = grid
        .iter()
        .zip(&variances)
        .map(|(&e, &v)| (v - closed(e)).abs())
        .fold(0.0, f64::max);
    let decreasing = variances.windows(2).all(|w| w[1] < w[0]);
    let pass = bias_err <= 1e-12 && v_half.abs() <= 1e-12 && decreasing && identity_err <= 1e-9 && closed_err <= 1e-12;
    verdict(
        "kl_counterexample",
        pass,
        format!(
            "|kl_bias-ln2| {bias_err:.1e}, kl_variance(½) {v_half:.1e}, decreasing {decreasing}, |bias+var-direct| {identity_err:.1e}, vs closed form {closed_err:.1e}"
        ),
    )
}

#[test]
fn calibration_counterexample_fixtures() {
    let tight = 1e-15;
    // first: h(i|x) = 1{x = i}, P(i|x) = 1{x ≠ i}, trivial grouping (one bin)
    let first = common::replicated(2, &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 0])
        .with_truth(vec![0.0, 1.0, 1.0, 0.0])
        .unwrap();
    let r1 = calibration_report(&first, GroupingScheme::Bin { num_bins: 1 }, Reference::Truth).unwrap();
    let class_means: Vec<f64> = r1.class_groups.iter().map(|g| g[0].residual).collect();
    let conf_residual = r1.confidence_groups[0].residual;
    let first_ok = r1.confidence_groups.len() == 1
        && class_means.iter().all(|&m| m == 0.0)
        && conf_residual == 1.0;

    // second: the two-input, four-class tables
    let h = [vec![0.3, 0.25, 0.2, 0.25], vec![0.3, 0.5, 0.2, 0.0]];
    let p = vec![0.4, 0.25, 0.1, 0.25, 0.2, 0.5, 0.3, 0.0];
    let second = common::replicated(2, &h, vec![0, 1]).with_truth(p).unwrap();
    let r2 = calibration_report(&second, GroupingScheme::Preimage, Reference::Truth).unwrap();
    let worst_pre = r2
        .class_groups
        .iter()
        .flatten()
        .map(|g| g.residual.abs())
        .fold(0.0, f64::max);
    let at_03 = r2.confidence_groups.iter().find(|g| g.key == 0.3).map(|g| g.residual);
    let second_ok = worst_pre <= tight && at_03.is_some_and(|r| (r + 0.1).abs() <= tight);
    verdict(
        "calibration_counterexample_fixtures",
        first_ok && second_ok,
        format!(
            "first: class residuals {class_means:?}, confidence residual {conf_residual}; second: max |pre-image residual| {worst_pre:.1e}, confidence residual at 0.3 {at_03:?} (-0.1)"
        ),
    )
}

#[test]
fn bvg_uncertainty_bound() {
    let start = Instant::now();
    let scheme = GroupingScheme::Bin { num_bins: 20 };
    let mut lines = Vec::new();
    let mut ok = true;
    let mut exact_worst = 0.0f64;
    for seed in 1..=5u64 {
        let b = generate_calibrated_ensemble(&GeneratorConfig {
            num_classes: 10,
            num_samples: 10_000,
            num_models: 20,
            alpha: 1.0,
            kappa: 10.0,
            one_hot: false,
            seed,
        })
        .unwrap();
        let r = calibration_report(&b, scheme, Reference::Labels).unwrap();
        let se = gap_bootstrap_se(&b, scheme, Reference::Labels, BOOTSTRAP_RESAMPLES, seed).unwrap();
        let seed_ok = r.lhs_gap <= r.rhs_bound + 3.0 * se.diff;
        ok &= seed_ok;
        lines.push(format!("{:.4}≤{:.4}+3·{:.4}", r.lhs_gap, r.rhs_bound, se.diff));

        // sample scheme with the mean function as the conditional
        let bvg = expected_bvg(&b, Reference::MeanFunction).unwrap();
        let unc: Vec<f64> = decompose_mse(&b).unwrap().iter().map(|d| d.uncertainty).collect();
        let exact = calibration_report(&b, GroupingScheme::Sample, Reference::MeanFunction).unwrap();
        let pointwise = bvg.iter().zip(&unc).map(|(g, u)| (g - u).abs()).fold(0.0, f64::max);
        exact_worst = exact_worst.max(pointwise).max(exact.lhs_gap).max((exact.bvg_mean - exact.uncertainty_mean).abs());
    }
    let pass = ok && exact_worst <= 1e-12;
    verdict(
        "bvg_uncertainty_bound",
        pass,
        format!(
            "seeds 1-5 lhs≤rhs+3se: [{}]; exact sample-scheme |BVG-Unc| {exact_worst:.1e} (≤1e-12), {:.2}s",
            lines.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

#[test]
fn gde_identities() {
    let mut identity_worst = 0.0f64;
    let mut gaps = Vec::new();
    let mut ok = true;
    for seed in 1..=5u64 {
        let b = generate_calibrated_ensemble(&GeneratorConfig {
            num_classes: 10,
            num_samples: 10_000,
            num_models: 20,
            alpha: 1.0,
            kappa: 10.0,
            one_hot: true,
            seed,
        })
        .unwrap();
        let r = gde_metrics(&b).unwrap();
        identity_worst = identity_worst
            .max((r.disagreement - r.mean_variance).abs())
            .max((r.test_error - r.mean_risk / 2.0).abs());
        let cace = r.cace.unwrap();
        ok &= r.gde_gap <= cace + 3.0 * r.mc_se;
        gaps.push(format!("{:.4}≤{:.4}+3·{:.4}", r.gde_gap, cace, r.mc_se));
    }
    let pass = ok && identity_worst <= 1e-12;
    verdict(
        "gde_identities",
        pass,
        format!("one-hot identities {identity_worst:.1e} (≤1e-12); |dis-err|≤cace+3se: [{}]", gaps.join(", ")),
    )
}

#[test]
fn neural_collapse_oracle_triangle() {
    let start = Instant::now();
    let (mut phi_worst, mut z_worst) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for kp in 1..=9usize {
        for s in [0.5, 1.0, 2.0] {
            let p = NcParams::new(kp + 1, s, 7);
            let cf = match closed_form_bv(&p) {
                Ok(cf) => cf,
                Err(e) => {
                    failures.push(format!("K'={kp} s={s}: {e}"));
                    continue;
                }
            };
            let q = phi_quadrature(kp, cf.c).unwrap();
            phi_worst = phi_worst.max((cf.phi - q).abs());
            let mc = mc_oracle_bv(&p, 1_000_000).unwrap();
            let e = mc.true_class();
            for z in [
                (e.mean - cf.mean_true_class) / e.se_mean,
                (e.bias - cf.bias_true_class) / e.se_mean,
                (e.std - cf.std_true_class) / e.se_std,
            ] {
                z_worst = z_worst.max(z.abs());
                if z.abs() > 3.0 {
                    failures.push(format!("K'={kp} s={s}: z {z:.2}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && phi_worst <= 1e-8 && within(elapsed, 60.0);
    verdict(
        "neural_collapse_oracle_triangle",
        pass,
        format!(
            "max |phi-quad| {phi_worst:.1e} (≤1e-8), max |z| {z_worst:.2} (≤3), {:.1}s (<60s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!(", failures {failures:?}") }
        ),
    )
}

#[test]
fn binary_ratio_bounds() {
    let sqrt3 = 3f64.sqrt();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut prev = f64::INFINITY;
    let mut reduction_worst = 0.0f64;
    let (mut lr_min, mut lr_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 1..=100 {
        let s = i as f64 / 10.0;
        let f = closed_form_bv_k2(s).unwrap();
        let lower = (2.0 * s - 1.0) / s.exp();
        if !(f.ratio < sqrt3 + 1e-9 && f.ratio >= lower - 1e-12) {
            ok = false;
            notes.push(format!("bounds at s={s}"));
        }
        if !(f.log_ratio > 0.557 && f.log_ratio < 2.0) {
            ok = false;
            notes.push(format!("log_ratio {} at s={s}", f.log_ratio));
        }
        if !(f.ratio < prev) {
            ok = false;
            notes.push(format!("not decreasing at s={s}"));
        }
        prev = f.ratio;
        lr_min = lr_min.min(f.log_ratio);
        lr_max = lr_max.max(f.log_ratio);
        let g = closed_form_bv(&NcParams::new(2, s, 0)).unwrap();
        reduction_worst = reduction_worst
            .max((g.bias_true_class - f.bias).abs())
            .max((g.std_true_class - f.std).abs());
    }
    let limit = closed_form_k2_from_c(1.0 + 1e-3).unwrap().ratio;
    let pass = ok && (limit - sqrt3).abs() <= 1e-2 && reduction_worst <= 1e-12;
    verdict(
        "binary_ratio_bounds",
        pass,
        format!(
            "bounds/monotone {ok} {notes:?}, log_ratio in [{lr_min:.4}, {lr_max:.4}], ratio at c=1+1e-3 {limit:.5} (√3±1e-2), K'=1 reduction {reduction_worst:.1e} (≤1e-12)"
        ),
    )
}

#[test]
fn synthetic_alignment_reproduction() {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in [5.0, 10.0, 20.0, 100.0] {
        let b = sample_nc_ensemble(&NcParams::new(2, s, 1), 200, 10).unwrap();
        let d = decompose(&b, Loss::Mse).unwrap();
        let fit = fit_loglog(&d, &FitOptions::default()).unwrap();
        let c_hat = linear_constants(&fit).unwrap().c_hat;
        let frac = bounded_variance_check(&d, c_hat).unwrap();
        let s_ok = (0.8..=1.2).contains(&fit.slope) && fit.r_squared >= 0.8 && frac >= 0.9;
        ok &= s_ok;
        parts.push(format!(
            "s={s}: slope {:.3} R² {:.3} n {} frac@C_hat {:.3}",
            fit.slope, fit.r_squared, fit.n_used, frac
        ));
    }
    let elapsed = start.elapsed();
    verdict(
        "synthetic_alignment_reproduction",
        ok && within(elapsed, 5.0),
        format!(
            "{} (need slope∈[0.8,1.2], R²≥0.8, frac≥0.9), {:.2}s (<5s)",
            parts.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

#[test]
fn parameterization_invariance() {
    let a = mc_oracle_bv(&NcParams::new(2, 1.0, 11), 1_000_000).unwrap();
    let b = mc_oracle_bv(
        &NcParams {
            mu: 1.0,
            beta: 2.0,
            ..NcParams::new(2, 1.0, 12)
        },
        1_000_000,
    )
    .unwrap();
    let (x, y) = (a.true_class(), b.true_class());
    let zb = (x.bias - y.bias) / x.se_mean.hypot(y.se_mean);
    let zs = (x.std - y.std) / x.se_std.hypot(y.se_std);
    verdict(
        "parameterization_invariance",
        zb.abs() <= 3.0 && zs.abs() <= 3.0,
        format!("bias z {zb:.2}, std z {zs:.2} (|z|≤3)"),
    )
}

#[test]
fn alignment_fit_quality_substitute() {
    // large-scale fits are out of reach; the synthetic fit quality stands in
    let mut worst = f64::INFINITY;
    for s in [5.0, 10.0, 20.0, 100.0] {
        let b = sample_nc_ensemble(&NcParams::new(2, s, 1), 200, 10).unwrap();
        let fit = fit_loglog(&decompose_mse(&b).unwrap(), &FitOptions::default()).unwrap();
        worst = worst.min(fit.r_squared);
    }
    verdict(
        "alignment_fit_quality_substitute",
        worst >= 0.8,
        format!("real-data R²≥0.977 not reproducible here; synthetic correct-only min R² {worst:.3} (≥0.8)"),
    )
}
