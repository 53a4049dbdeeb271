mod common;

use common::{standardized_errors, synthetic_dataset, synthetic_truth};
use depthscale::fit::{
    fit_decomposed, fit_toy_depth, loss_parts, objective_at, predict, residual_jacobian, terms,
    FitOptions, Objective, ScalingDataset, ScalingParams, ScalingRow,
};
use proptest::prelude::*;

#[test]
fn noiseless_data_recovered_closely() {
    let data = synthetic_dataset(1, 0.0, 1);
    let fit = fit_decomposed(&data, 0, &FitOptions::default()).unwrap();
    let t = synthetic_truth();
    assert!((fit.params.alpha_m - t.alpha_m).abs() < 0.05, "{:?}", fit.params);
    assert!((fit.params.alpha_ell - t.alpha_ell).abs() < 0.05, "{:?}", fit.params);
    assert!((fit.params.alpha_d - t.alpha_d).abs() < 0.02, "{:?}", fit.params);
    assert!(fit.mean_relative_residual < 1e-3);
    assert_eq!(fit.residuals.len(), data.len());
    assert!(fit.std_errors.to_array().iter().all(|s| *s >= 0.0));
}

#[test]
fn noisy_fit_within_three_standard_errors() {
    let data = synthetic_dataset(7, 0.01, 1);
    let fit = fit_decomposed(&data, 0, &FitOptions::default()).unwrap();
    let z = standardized_errors(&fit, &synthetic_truth());
    assert!(z.iter().all(|&v| v < 3.0), "z = {z:?}, fit {:?}", fit.params);
}

#[test]
fn objective_has_converged_over_the_final_window() {
    let data = synthetic_dataset(3, 0.01, 1);
    let fit = fit_decomposed(&data, 0, &FitOptions { n_starts: 1, ..FitOptions::default() }).unwrap();
    let hist = fit.objective_history.unwrap();
    let (head, tail) = hist.split_at(hist.len() - 1000);
    let min = |s: &[(usize, f64)]| s.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let before = min(head);
    let after = min(tail);
    // no meaningful progress is left in the last 1000 records
    assert!((before - after).abs() / before < 1e-6, "{before} -> {after}");
    assert!(fit.objective <= after);
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let data = synthetic_dataset(5, 0.01, 1);
    let p = ScalingParams { alpha_m: 0.9, l0: 1.5, ..synthetic_truth() };
    for offset in [0usize, 2] {
        let jac = residual_jacobian(&data, &p, offset).unwrap();
        let base = p.to_array();
        for k in 0..7 {
            let h = 1e-6 * base[k].abs().max(1.0);
            let (mut up, mut dn) = (base, base);
            up[k] += h;
            dn[k] -= h;
            for (i, row) in data.rows.iter().enumerate() {
                let r = |q: [f64; 7]| row.loss - predict(&ScalingParams::from_array(q), row, offset).unwrap();
                let fd = (r(up) - r(dn)) / (2.0 * h);
                let a = jac[(i, k)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
                assert!(rel < 1e-5, "param {k} row {i}: analytic {a} fd {fd}");
            }
        }
    }
}

#[test]
fn loss_parts_are_exact_on_noiseless_data() {
    let data = synthetic_dataset(1, 0.0, 1);
    let t = synthetic_truth();
    for part in loss_parts(&data, &t, 0).unwrap() {
        assert!((part.depth_part - part.depth_term).abs() < 1e-10);
        assert!((part.width_part - part.width_term).abs() < 1e-10);
        assert!((part.data_part - part.data_term).abs() < 1e-10);
        let rebuilt = part.depth_part + part.width_term + part.data_term + t.l0;
        assert!((rebuilt - part.row.loss).abs() < 1e-12);
    }
}

#[test]
fn depth_offset_variant_fits() {
    let data = synthetic_dataset(9, 0.01, 1);
    let fit = fit_decomposed(&data, 2, &FitOptions { steps: 20_000, ..FitOptions::default() }).unwrap();
    assert_eq!(fit.depth_offset, 2);
    assert!(fit.params.alpha_ell.is_finite());
    let rows = vec![ScalingRow { m: 10.0, ell: 2.0, d: 10.0, loss: 1.0 }; 9];
    let shallow = ScalingDataset::new(rows, "t").unwrap();
    assert!(fit_decomposed(&shallow, 2, &FitOptions::default()).is_err());
}

#[test]
fn literal_objective_is_available() {
    let data = synthetic_dataset(1, 0.0, 1);
    let t = synthetic_truth();
    let a = objective_at(&data, &t, 0, Objective::LogLog).unwrap();
    let b = objective_at(&data, &t, 0, Objective::LogMinusLinear).unwrap();
    assert!(a < 1e-20);
    assert!(b > 1.0);
}

#[test]
fn std_errors_shrink_with_replication() {
    let opts = FitOptions { n_starts: 2, steps: 30_000, ..FitOptions::default() };
    let one = fit_decomposed(&synthetic_dataset(21, 0.01, 1), 0, &opts).unwrap();
    let four = fit_decomposed(&synthetic_dataset(22, 0.01, 4), 0, &opts).unwrap();
    let ratio = one.std_errors.alpha_ell / four.std_errors.alpha_ell;
    assert!((1.4..2.8).contains(&ratio), "std error ratio {ratio} (expected about 2)");
}

#[test]
fn toy_fit_exact_across_exponents() {
    let depths = [6.0f64, 12.0, 16.0, 24.0, 32.0, 48.0];
    let mut alpha: f64 = 0.25;
    while alpha <= 6.0 + 1e-12 {
        let pts: Vec<(f64, f64)> = depths.iter().map(|&l| (l, 2.0 * l.powf(-alpha) + 0.1)).collect();
        let f = fit_toy_depth(&pts).unwrap();
        assert!(f.identifiable, "alpha {alpha}");
        assert!((f.alpha - alpha).abs() < 1e-8 * alpha.max(1.0), "alpha {alpha}: got {f:?}");
        assert!((f.c - 2.0).abs() < 1e-6, "alpha {alpha}: got {f:?}");
        assert!((f.offset - 0.1).abs() < 1e-10, "alpha {alpha}: got {f:?}");
        alpha += 0.25;
    }
}

#[test]
fn toy_fit_with_replicates_reports_errors() {
    let mut rng = depthscale::math::Rng::new(4);
    let mut pts = Vec::new();
    for _ in 0..3 {
        for l in [4.0, 8.0, 16.0, 32.0] {
            pts.push((l, (1.0 / l + 0.1) * (1.0 + 0.01 * rng.normal())));
        }
    }
    let f = fit_toy_depth(&pts).unwrap();
    let se = f.alpha_stderr().unwrap();
    assert!(se > 0.0 && (f.alpha - 1.0).abs() < 4.0 * se, "{f:?}");
}

proptest! {
    #[test]
    fn predict_decreases_in_each_size(
        m in 1.0f64..1e4, ell in 3.0f64..100.0, d in 1e6f64..1e12,
        am in 0.05f64..2.0, al in 0.05f64..2.0, ad in 0.05f64..2.0, scale in 1.01f64..10.0,
    ) {
        let p = ScalingParams { ln_c_m: 1.0, ln_c_ell: 0.5, ln_c_d: 2.0, alpha_m: am, alpha_ell: al, alpha_d: ad, l0: 1.0 };
        let row = ScalingRow { m, ell, d, loss: 1.0 };
        // each term strictly decreases; the sum may round a tiny term away
        let base = terms(&p, &row, 0).unwrap();
        let wider = terms(&p, &ScalingRow { m: m * scale, ..row }, 0).unwrap();
        let deeper = terms(&p, &ScalingRow { ell: ell * scale, ..row }, 0).unwrap();
        let longer = terms(&p, &ScalingRow { d: d * scale, ..row }, 0).unwrap();
        prop_assert!(wider.width < base.width);
        prop_assert!(deeper.depth < base.depth);
        prop_assert!(longer.data < base.data);
        let total = predict(&p, &row, 0).unwrap();
        for r in [ScalingRow { m: m * scale, ..row }, ScalingRow { ell: ell * scale, ..row }, ScalingRow { d: d * scale, ..row }] {
            prop_assert!(predict(&p, &r, 0).unwrap() <= total);
        }
        let deeper_offset = terms(&p, &ScalingRow { ell: ell * scale, ..row }, 2).unwrap();
        prop_assert!(deeper_offset.depth < terms(&p, &row, 2).unwrap().depth);
    }
}

#[test]
fn shipped_fixture_matches_generator() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_scaling.csv");
    let shipped = depthscale::fit::load_scaling_csv(&path, 0).unwrap();
    assert_eq!(shipped.rows, synthetic_dataset(7, 0.01, 1).rows);
}
