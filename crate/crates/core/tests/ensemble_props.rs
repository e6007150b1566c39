mod common;

use bva_core::ensemble::{compute_mean_function, decompose_kl, decompose_mse, MeanKind};
use bva_core::PredictionBundle;
use common::{dd_sum, random_bundle};
use proptest::prelude::*;

/// Bundle of `t × n` rows of `k` positive weights, normalised per row.
fn bundle_strategy() -> impl Strategy<Value = PredictionBundle> {
    (2usize..6, 1usize..12, 2usize..7)
        .prop_flat_map(|(t, n, k)| {
            (
                Just((t, n, k)),
                prop::collection::vec(1e-6f64..1.0, t * n * k),
                prop::collection::vec(0..k as u32, n),
            )
        })
        .prop_map(|((t, n, k), w, labels)| {
            let mut preds = w;
            for row in preds.chunks_mut(k) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            PredictionBundle::new(t, n, k, preds, labels).unwrap()
        })
}

/// Two-pass textbook quantities accumulated in double-double.
fn oracle(b: &PredictionBundle, n: usize) -> (f64, f64, f64) {
    let (t_count, k, y) = (b.num_models(), b.num_classes(), b.label(n));
    let tf = t_count as f64;
    let mean: Vec<f64> = (0..k).map(|i| dd_sum((0..t_count).map(|t| b.row(t, n)[i])) / tf).collect();
    let onehot = |i: usize| if i == y { 1.0 } else { 0.0 };
    let bias_sq = dd_sum((0..k).map(|i| (mean[i] - onehot(i)).powi(2)));
    let variance = dd_sum((0..t_count).flat_map(|t| (0..k).map(move |i| (t, i))).map(|(t, i)| {
        (b.row(t, n)[i] - mean[i]).powi(2)
    })) / tf;
    let risk = dd_sum((0..t_count).flat_map(|t| (0..k).map(move |i| (t, i))).map(|(t, i)| {
        (b.row(t, n)[i] - onehot(i)).powi(2)
    })) / tf;
    (bias_sq, variance, risk)
}

proptest! {
    #![proptest_config(common::prop_config(256))]

    #[test]
    fn risk_is_bias_sq_plus_variance(b in bundle_strategy()) {
        for d in decompose_mse(&b).unwrap() {
            let scale = d.risk.max(1e-300);
            prop_assert!((d.bias_sq + d.variance - d.risk).abs() <= 1e-12 * scale.max(1.0));
            prop_assert!(d.bias_sq >= 0.0 && d.variance >= 0.0);
            prop_assert!((d.bvg - (d.bias_sq - d.variance)).abs() == 0.0);
            prop_assert!(d.uncertainty >= -1e-15 && d.uncertainty <= 1.0);
        }
    }

    #[test]
    fn matches_double_double_oracle(b in bundle_strategy()) {
        for d in decompose_mse(&b).unwrap() {
            let (bs, v, r) = oracle(&b, d.index);
            prop_assert!((d.bias_sq - bs).abs() <= 1e-13);
            prop_assert!((d.variance - v).abs() <= 1e-13);
            prop_assert!((d.risk - r).abs() <= 1e-13);
        }
    }

    #[test]
    fn entry_level_sums_agree(b in bundle_strategy()) {
        for d in decompose_mse(&b).unwrap() {
            let bs = dd_sum(d.entry_bias.iter().map(|v| v * v));
            let v = dd_sum(d.entry_variance.iter().copied());
            prop_assert!((bs - d.bias_sq).abs() <= 1e-14);
            prop_assert!((v - d.variance).abs() <= 1e-14);
        }
    }

    #[test]
    fn kl_identity_and_nonnegativity(b in bundle_strategy()) {
        for kl in decompose_kl(&b, None).unwrap() {
            prop_assert!(kl.kl_bias >= -1e-12);
            prop_assert!(kl.kl_variance >= -1e-12);
            let tol = 1e-10 * kl.direct.abs().max(1.0);
            prop_assert!((kl.kl_bias + kl.kl_variance - kl.direct).abs() <= tol);
        }
    }

    #[test]
    fn mean_function_rows_are_simplex(b in bundle_strategy()) {
        for kind in [MeanKind::Arithmetic, MeanKind::GeometricSoftmax] {
            let m = compute_mean_function(&b, kind).unwrap();
            for n in 0..m.num_samples() {
                let row = m.row(n);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((dd_sum(row.iter().copied()) - 1.0).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn model_order_does_not_change_sums(b in bundle_strategy()) {
        let (t, n, k) = (b.num_models(), b.num_samples(), b.num_classes());
        let mut rev = Vec::with_capacity(t * n * k);
        for m in (0..t).rev() {
            for s in 0..n {
                rev.extend_from_slice(b.row(m, s));
            }
        }
        let r = PredictionBundle::new(t, n, k, rev, b.labels().to_vec()).unwrap();
        for (a, c) in decompose_mse(&b).unwrap().iter().zip(decompose_mse(&r).unwrap()) {
            prop_assert!((a.risk - c.risk).abs() <= 1e-14);
            prop_assert!((a.variance - c.variance).abs() <= 1e-14);
        }
    }
}

#[test]
fn arithmetic_mean_matches_oracle() {
    let b = random_bundle(3, 37, 50, 9);
    let m = compute_mean_function(&b, MeanKind::Arithmetic).unwrap();
    for n in 0..50 {
        for i in 0..9 {
            let want = dd_sum((0..37).map(|t| b.row(t, n)[i])) / 37.0;
            assert!((m.row(n)[i] - want).abs() <= 1e-12 * want.max(1e-300).max(1.0));
        }
    }
}

#[test]
fn geometric_mean_matches_log_space_oracle() {
    let b = random_bundle(4, 5, 20, 4);
    let m = compute_mean_function(&b, MeanKind::GeometricSoftmax).unwrap();
    for n in 0..20 {
        let logs: Vec<f64> = (0..4).map(|i| dd_sum((0..5).map(|t| b.row(t, n)[i].ln())) / 5.0).collect();
        let z: f64 = logs.iter().map(|v| v.exp()).sum();
        for (got, l) in m.row(n).iter().zip(&logs) {
            assert!((got - l.exp() / z).abs() <= 1e-13);
        }
    }
}

#[test]
fn bit_stable_across_thread_counts() {
    let b = random_bundle(8, 40, 300, 10);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (decompose_mse(&b).unwrap(), decompose_kl(&b, None).unwrap()))
    };
    let one = run(1);
    for threads in [2, 4, 7] {
        let other = run(threads);
        assert_eq!(one.0, other.0, "MSE decomposition differs with {threads} threads");
        assert_eq!(one.1, other.1, "KL decomposition differs with {threads} threads");
    }
}

#[test]
fn saturated_member_keeps_label_entry_precision() {
    // h(y) rounds to 1 but the off-label mass is 3e-20
    let rows = vec![vec![1.0, 1e-20, 2e-20]];
    let b = common::replicated(3, &rows, vec![0]);
    let d = &decompose_mse(&b).unwrap()[0];
    let want = 9e-40 + 1e-40 + 4e-40;
    assert!((d.risk - want).abs() <= 1e-12 * want, "risk {:e}", d.risk);
    assert!((d.bias_sq - want).abs() <= 1e-12 * want);
    assert_eq!(d.variance, 0.0);
}
