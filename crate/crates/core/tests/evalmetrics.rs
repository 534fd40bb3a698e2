mod common;

use common::{gaussian_variance, ks_null_statistics, normal_matrix, normal_vec, upper_tail};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sva_core::basisfit::build_basis;
use sva_core::evalmetrics::*;
use sva_core::graphsem::{build_lowdim_sem, simulate_seeded, Polynomial};
use sva_core::rng::seeded;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cca_symmetric_and_invariant(seed in 0u64..10_000, p in 1usize..5) {
        let mut rng = seeded(seed);
        let a = normal_matrix(&mut rng, 40, p);
        let b = normal_matrix(&mut rng, 40, p) + &a * 0.5;
        let ab = cca_overlap(&a, &b).unwrap();
        let ba = cca_overlap(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-8);
        let t = normal_matrix(&mut rng, p, p) + DMatrix::identity(p, p) * 3.0;
        let at = cca_overlap(&(&a * t), &b).unwrap();
        prop_assert!((at - ab).abs() < 1e-8);
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert!((cca_overlap(&a, &(&a * 2.0)).unwrap() - 100.0).abs() < 1e-8);
    }

    #[test]
    fn ks_statistic_is_permutation_invariant(seed in 0u64..10_000, m in 1usize..200) {
        let mut rng = seeded(seed);
        let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let a = ks_uniform(&v).unwrap();
        v.shuffle(&mut rng);
        prop_assert_eq!(a, ks_uniform(&v).unwrap());
        prop_assert!(a.1 >= 0.0 && a.1 <= 1.0);
    }

    #[test]
    fn r2_in_unit_interval_and_mae_translation_covariant(seed in 0u64..10_000, shift in -3.0f64..3.0) {
        let mut rng = seeded(seed);
        let y = normal_vec(&mut rng, 50);
        let h = normal_matrix(&mut rng, 50, 3);
        let r2 = r2_dependence(&y, &h, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&r2));
        let basis = build_basis(&y, 1, false).unwrap();
        let truth = vec![Polynomial(vec![0.7])];
        let est = DMatrix::from_element(1, 1, 0.2);
        let shifted_truth = vec![Polynomial(vec![0.7 + shift])];
        let shifted_est = DMatrix::from_element(1, 1, 0.2 + shift);
        let a = fxj_mae(&truth, &est, &basis, &y).unwrap()[0];
        let b = fxj_mae(&shifted_truth, &shifted_est, &basis, &y).unwrap()[0];
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }
}

#[test]
fn cca_orthogonal_complement_is_zero() {
    let mut rng = seeded(1);
    let a = sva_core::linalg::center_columns(&normal_matrix(&mut rng, 50, 2));
    let raw = sva_core::linalg::center_columns(&normal_matrix(&mut rng, 50, 2));
    let q = sva_core::linalg::orthonormal_basis(&a, 1e-12);
    let b = &raw - &q * (q.transpose() * &raw);
    assert!(cca_overlap(&a, &b).unwrap() < 1e-6);
}

#[test]
fn mismatched_dimensions_penalize_missing_directions() {
    let mut rng = seeded(2);
    let a = normal_matrix(&mut rng, 60, 4);
    let two = a.columns(0, 2).into_owned();
    assert!((cca_overlap(&a, &two).unwrap() - 50.0).abs() < 1e-8);
}

#[test]
fn r2_null_and_exact() {
    let mut rng = seeded(3);
    let y = normal_vec(&mut rng, 10_000);
    let h = normal_matrix(&mut rng, 10_000, 3);
    assert!(r2_dependence(&y, &h, 1).unwrap() < 0.01);
    let exact = DMatrix::from_fn(10_000, 2, |i, k| (k as f64 - 0.5) * y[i]);
    assert!((r2_dependence(&y, &exact, 1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn lowdim_true_r2_matches_quadrature() {
    let spec = build_lowdim_sem(&mut seeded(0));
    let oracle: f64 = spec
        .fh_coeffs
        .iter()
        .map(|f| {
            let v = gaussian_variance(|y| f.eval(y));
            v / (v + 1.0)
        })
        .sum::<f64>()
        / 4.0;
    assert!((oracle - 0.381_809).abs() < 1e-5, "{oracle}");
    let data = simulate_seeded(&spec, 1_000_000, 17).unwrap();
    let sim = r2_dependence(&data.y, &data.h_true, 2).unwrap();
    assert!((sim / oracle - 1.0).abs() < 0.02, "{sim} vs {oracle}");
}

#[test]
fn mae_of_missed_linear_effect() {
    let y = normal_vec(&mut seeded(4), 1_000_000);
    let basis = build_basis(&y, 1, false).unwrap();
    let mae = fxj_mae(&[Polynomial(vec![1.0])], &DMatrix::zeros(1, 1), &basis, &y).unwrap()[0];
    let expected = (2.0 / std::f64::consts::PI).sqrt();
    assert!((mae / expected - 1.0).abs() < 0.01);
    assert!(fxj_mae(&[Polynomial(vec![1.0])], &DMatrix::zeros(1, 2), &basis, &y).is_err());
}

#[test]
fn ks_asymptotic_pvalues_match_simulation() {
    let mut rng = seeded(99);
    for m in [10usize, 100] {
        let sims = ks_null_statistics(&mut rng, m, 100_000);
        for q in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let d = sims[(q * sims.len() as f64) as usize];
            let mc = upper_tail(&sims, d);
            let asym = ks_pvalue(d, m);
            assert!((asym - mc).abs() < 0.01, "m={m} d={d}: {asym} vs {mc}");
        }
    }
}

#[test]
fn nested_ks_valid_and_degenerate() {
    let mut rng = seeded(5);
    let valid: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..1000).map(|_| rng.random::<f64>()).collect())
        .collect();
    let (stat, p) = nested_ks(&valid).unwrap();
    assert!(stat < 0.15 && p > 0.01, "{stat} {p}");
    let flat = vec![vec![0.5; 1000]; 100];
    let (stat, _) = nested_ks(&flat).unwrap();
    assert!(stat > 0.99);
}

#[test]
fn metrics_csv_record_shape() {
    let r = MetricsReport {
        method: "svdr".into(),
        rep: 3,
        cnode_overlap: None,
        hnode_overlap: 90.0,
        r2_diff: 0.1,
        fxj_mae: vec![0.2, 0.4],
        fxj_mae_median: 0.3,
        ks_stat: 0.05,
    };
    let rec = r.csv_record();
    assert_eq!(rec.len(), METRICS_HEADER.len());
    assert_eq!(rec[2], "");
}
