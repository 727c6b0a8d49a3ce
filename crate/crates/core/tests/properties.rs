//! Invariances every fit must respect, checked on random normal datasets.

mod common;

use common::normal_twins;
use nalgebra::DMatrix;
use proptest::prelude::*;
use twingee::estimators::derived_proportions;
use twingee::moments::CovariateTerm;
use twingee::solver::{initial_alpha, model_based_cov, sandwich_cov, solve};
use twingee::{
    center, fit, AceParams, CenterMode, CorrLink, Estimator, FitOptions, MomentModel, SolverConfig, TwinDataset,
    VarianceLink,
};

fn dataset(seed: u64, n_mz: usize, n_dz: usize, a: f64, c: f64, e: f64) -> TwinDataset {
    center(&normal_twins(seed, n_mz, n_dz, AceParams::new(a, c, e)), CenterMode::PerZygosity).unwrap()
}

fn assert_psd_symmetric(m: &DMatrix<f64>, what: &str) {
    let scale = m.amax().max(1e-300);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale, "{what} not symmetric");
        }
    }
    let eig = m.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale), "{what} not PSD: {}", eig.eigenvalues);
}

fn tight() -> FitOptions {
    let mut o = FitOptions::default();
    o.solver.tol = 1e-12;
    o
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn proportions_are_scale_free(
        seed in any::<u64>(),
        k in prop_oneof![0.01f64..0.5, 2.0f64..100.0],
        a in 0.1f64..0.6, c in 0.05f64..0.3, e in 0.1f64..0.4,
    ) {
        let data = dataset(seed, 150, 150, a, c, e);
        let scaled = data.scaled(k);
        for est in Estimator::ALL {
            let f = fit(&data, est, &tight()).unwrap();
            let g = fit(&scaled, est, &tight()).unwrap();
            let (p, q) = (f.proportions(), g.proportions());
            prop_assert!((p.h2 - q.h2).abs() < 1e-8, "{est}: {} vs {}", p.h2, q.h2);
            prop_assert!((p.c2 - q.c2).abs() < 1e-8, "{est}");
            prop_assert!((f.se_h2() - g.se_h2()).abs() < 1e-8, "{est}: se {} vs {}", f.se_h2(), g.se_h2());
            prop_assert!((f.se_c2() - g.se_c2()).abs() < 1e-8, "{est}");
        }
    }

    #[test]
    fn twin_labels_are_exchangeable(
        seed in any::<u64>(),
        a in 0.1f64..0.6, c in 0.05f64..0.3, e in 0.1f64..0.4,
    ) {
        let data = dataset(seed, 120, 180, a, c, e);
        let swapped = data.swapped();
        for est in Estimator::ALL {
            let f = fit(&data, est, &tight()).unwrap();
            let g = fit(&swapped, est, &tight()).unwrap();
            let (p, q) = (f.proportions(), g.proportions());
            prop_assert!((p.h2 - q.h2).abs() < 1e-10 && (p.c2 - q.c2).abs() < 1e-10, "{est}");
            prop_assert!((f.se_h2() - g.se_h2()).abs() < 1e-10, "{est}");
        }
    }

    #[test]
    fn working_covariance_scale_does_not_move_estimates(
        seed in any::<u64>(),
        scale in prop_oneof![1e-3f64..0.5, 2.0f64..1e3],
        falconer in any::<bool>(),
    ) {
        let data = dataset(seed, 150, 150, 0.4, 0.3, 0.3);
        let base = if falconer { MomentModel::falconer() } else { MomentModel::nace() };
        let cfg = SolverConfig { tol: 1e-13, ..SolverConfig::default() };
        let a0 = initial_alpha(&data, &base).unwrap();
        let x = solve(&data, &base, &a0, &cfg).unwrap();
        let y = solve(&data, &base.clone().with_omega_scale(scale), &a0, &cfg).unwrap();
        for (u, v) in x.alpha_hat.iter().zip(&y.alpha_hat) {
            prop_assert!((u - v).abs() < 1e-10, "{:?} vs {:?}", x.alpha_hat, y.alpha_hat);
        }
        // the sandwich is invariant too, the model-based form is not
        let sx = sandwich_cov(&x, data.len()).unwrap();
        let sy = sandwich_cov(&y, data.len()).unwrap();
        prop_assert!((sx - sy).amax() < 1e-10);
    }

    #[test]
    fn covariances_are_symmetric_psd_and_proportions_sum_to_one(
        seed in any::<u64>(),
        a in 0.0f64..0.6, c in 0.0f64..0.4, e in 0.05f64..0.5,
        n_mz in 40usize..200, n_dz in 40usize..200,
    ) {
        let data = dataset(seed, n_mz, n_dz, a, c, e);
        for est in Estimator::ALL {
            let f = fit(&data, est, &FitOptions::default()).unwrap();
            let p = f.proportions();
            prop_assert!((p.h2 + p.c2 + p.e2 - 1.0).abs() < 1e-12);
            if f.diagnostics.converged {
                assert_psd_symmetric(&f.cov_matrix(), est.name());
            }
        }
        for model in [MomentModel::nace(), MomentModel::falconer()] {
            let a0 = initial_alpha(&data, &model).unwrap();
            let out = solve(&data, &model, &a0, &SolverConfig::default()).unwrap();
            if out.converged {
                assert_psd_symmetric(&sandwich_cov(&out, data.len()).unwrap(), "sandwich");
                assert_psd_symmetric(&model_based_cov(&out, data.len()).unwrap(), "model-based");
            }
        }
    }

    #[test]
    fn delta_method_gradients_match_finite_differences(
        kind in 0u8..6,
        raw in proptest::collection::vec(-0.6f64..0.6, 12),
        x in 0.0f64..1.0,
    ) {
        let term = CovariateTerm::Linear { index: 0, name: "x".into() };
        let (model, with_term) = match kind {
            0 => (MomentModel::nace(), false),
            1 => (MomentModel::nace().with_links(VarianceLink::Log, CorrLink::Identity), false),
            2 => (MomentModel::nace().with_terms(vec![term]), true),
            3 => (MomentModel::falconer(), false),
            4 => (MomentModel::falconer().with_links(VarianceLink::Log, CorrLink::FisherZ), false),
            _ => (MomentModel::falconer().with_links(VarianceLink::Log, CorrLink::FisherZ).with_terms(vec![term]), true),
        };
        let mut alpha = raw[..model.dim()].to_vec();
        let p = model.design_len();
        if model.var_link == VarianceLink::Identity {
            // keep variances positive and correlations inside (−1, 1)
            for v in alpha.iter_mut() { *v = v.abs() * 0.5 + 0.2; }
            if model.parameterization == twingee::moments::Parameterization::Falconer {
                for v in alpha[p..].iter_mut() { *v *= 0.5; }
            }
        }
        let terms: Vec<f64> = if with_term { vec![x] } else { vec![] };
        let d = derived_proportions(&model, &alpha, &terms);
        for (name, q) in [("h2", &d.h2), ("c2", &d.c2), ("e2", &d.e2)] {
            for j in 0..alpha.len() {
                let h = 1e-6 * alpha[j].abs().max(1.0);
                let mut up = alpha.clone();
                let mut dn = alpha.clone();
                up[j] += h;
                dn[j] -= h;
                let value = |v: &[f64]| {
                    let e = derived_proportions(&model, v, &terms);
                    match name { "h2" => e.h2.value, "c2" => e.c2.value, _ => e.e2.value }
                };
                let fd = (value(&up) - value(&dn)) / (2.0 * h);
                let an = q.gradient[j];
                prop_assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                    "kind {kind} {name}[{j}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn model_based_and_sandwich_agree_on_normal_data() {
    let data = dataset(77, 4000, 4000, 0.5, 0.3, 0.2);
    let nace = fit(&data, Estimator::Nace, &FitOptions::default()).unwrap();
    let gee = fit(&data, Estimator::Gee2Nace, &FitOptions::default()).unwrap();
    assert_eq!(nace.alpha_hat, gee.alpha_hat);
    let ratio = gee.se_h2() / nace.se_h2();
    assert!((ratio - 1.0).abs() < 0.10, "sandwich/model-based SE ratio {ratio}");
    let ratio = gee.se_c2() / nace.se_c2();
    assert!((ratio - 1.0).abs() < 0.10, "c2 ratio {ratio}");
}
