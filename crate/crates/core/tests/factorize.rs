mod common;

use common::{normal_matrix, normal_vec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use sva_core::basisfit::{build_basis, fit, HatMatrix};
use sva_core::factorize::*;
use sva_core::graphsem::{build_sem, simulate, SemConfig};
use sva_core::linalg::{column_vec, pearson, sample_variance, squared_singular_values};
use sva_core::par::Execution;
use sva_core::rng::{seeded, stream};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factorization_invariants(seed in 0u64..10_000, n in 8usize..30, j in 8usize..40, l_frac in 0.1f64..1.0) {
        let r = normal_matrix(&mut seeded(seed), n, j);
        let l = ((n.min(j) as f64 * l_frac).ceil() as usize).max(1);
        let f = svd_factorize(&r, l, SvdMode::Left).unwrap();
        let rel = (&f.c_hat * &f.lambda + &f.e - &r).norm() / r.norm();
        prop_assert!(rel < 1e-8);
        let gram = f.c_hat.transpose() * &f.c_hat;
        for a in 0..l {
            for b in 0..l {
                if a != b { prop_assert!(gram[(a, b)].abs() < 1e-8); }
            }
            // Columns are scaled to squared norm n.
            prop_assert!((gram[(a, a)] - n as f64).abs() < 1e-8);
        }
        prop_assert!((f.c_hat.transpose() * &f.e).amax() < 1e-8 * r.norm());
        // Residuals of a fit with intercept are centered, and then the
        // factors are uncorrelated with every remainder column.
        let centered = HatMatrix::centering(n).residualize(&r);
        let lc = l.min(n - 1);
        let fc = svd_factorize(&centered, lc, SvdMode::Left).unwrap();
        for a in 0..lc {
            let c = column_vec(&fc.c_hat, a);
            for k in 0..j {
                // Columns reconstructed exactly carry only rounding noise.
                if fc.e.column(k).norm() > 1e-6 * centered.norm() {
                    prop_assert!(pearson(&c, &column_vec(&fc.e, k)).abs() < 1e-8);
                }
            }
        }
        let right = svd_factorize(&r, l, SvdMode::Right).unwrap();
        prop_assert!((&right.c_hat - &f.c_hat).amax() < 1e-8);

        let nu: f64 = {
            let s = squared_singular_values(&r);
            let t: f64 = s.iter().sum();
            s.iter().map(|v| v / t).sum()
        };
        prop_assert!((nu - 1.0).abs() < 1e-10);
    }

    #[test]
    fn row_permutation_keeps_singular_values(seed in 0u64..10_000) {
        let mut rng = seeded(seed);
        let r = normal_matrix(&mut rng, 12, 20);
        let perm: Vec<usize> = (0..12).rev().collect();
        let p = DMatrix::from_fn(12, 20, |i, k| r[(perm[i], k)]);
        let a = svd_factorize(&r, 3, SvdMode::Left).unwrap().singular_values;
        let b = svd_factorize(&p, 3, SvdMode::Left).unwrap().singular_values;
        for (x, y) in a.iter().zip(&b) { prop_assert!((x - y).abs() < 1e-8); }
    }
}

#[test]
fn rank_one_is_exact() {
    let mut rng = seeded(5);
    let u = nalgebra::DVector::from_vec(normal_vec(&mut rng, 15)).normalize();
    let v = nalgebra::DVector::from_vec(normal_vec(&mut rng, 25)).normalize();
    let r = &u * v.transpose();
    let f = svd_factorize(&r, 1, SvdMode::Left).unwrap();
    assert!(f.e.amax() < 1e-8);
}

#[test]
fn centered_left_factors_have_unit_sample_variance_after_scaling() {
    let r = normal_matrix(&mut seeded(8), 40, 60);
    let h = HatMatrix::centering(40);
    let f = svd_factorize(&h.residualize(&r), 4, SvdMode::Left).unwrap();
    for k in 0..4 {
        let v = sample_variance(&column_vec(&f.c_hat, k));
        assert!((v - 40.0 / 39.0).abs() < 1e-10);
    }
}

#[test]
fn pa_is_deterministic() {
    let r = normal_matrix(&mut seeded(1), 30, 80);
    let h = HatMatrix::centering(30);
    let cfg = PaConfig {
        b: 30,
        ..PaConfig::default()
    };
    let a = parallel_analysis(&r, &h, &cfg, &mut seeded(4)).unwrap();
    let b = parallel_analysis(&r, &h, &cfg, &mut seeded(4)).unwrap();
    let s = parallel_analysis(
        &r,
        &h,
        &PaConfig {
            exec: Execution::Sequential,
            ..cfg
        },
        &mut seeded(4),
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a, s);
    assert!((a.nu_hat.iter().sum::<f64>() - 1.0).abs() < 1e-10 || a.m < 30);
    assert!(serde_json::to_string(&a).unwrap().contains("\"L_hat\""));
}

#[test]
fn base_scenario_residuals_give_about_ten_factors() {
    let cfg = SemConfig::highdim_base();
    let runs = 20;
    let mut hits = 0;
    for run in 0..runs {
        let spec = build_sem(&cfg, &mut stream(900, run)).unwrap();
        let data = simulate(&spec, 100, &mut stream(901, run)).unwrap();
        let basis = build_basis(&data.y, 1, true).unwrap();
        let res = fit(&basis, &data.x).unwrap().residuals;
        let rep = parallel_analysis(
            &res,
            &basis.hat,
            &PaConfig::default(),
            &mut stream(902, run),
        )
        .unwrap();
        if (8..=12).contains(&rep.l_hat) {
            hits += 1;
        }
    }
    assert!(hits * 10 >= runs * 8, "{hits}/{runs}");
}
