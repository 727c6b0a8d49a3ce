//! Covariate-dependent variance components.

use twingee::estimators::{Contrast, Quantity};
use twingee::simulate::{replicate_rng, simulate_sex_normal, SEX_PARAMS};
use twingee::{
    center, fit, fit_with_variance_covariates, wald_contrast, CenterMode, CovariateSpec, Error, Estimator,
    FitOptions, TwinDataset, TwinPair,
};

fn tight() -> FitOptions {
    let mut o = FitOptions::default();
    o.solver.tol = 1e-12;
    o
}

fn sex_data(seed: u64) -> TwinDataset {
    let d = simulate_sex_normal(450, 450, &SEX_PARAMS, &mut replicate_rng(seed, 0)).unwrap();
    center(&d, CenterMode::PerZygosity).unwrap()
}

/// With a binary covariate the estimating equations split by level, so the
/// joint fit must reproduce two separate fits exactly, SEs included.
#[test]
fn binary_covariate_fit_factorizes_into_per_level_fits() {
    for seed in 0..5 {
        let data = sex_data(seed);
        for est in [Estimator::Gee2Nace, Estimator::Gee2Falconer] {
            let joint = fit_with_variance_covariates(&data, est, &CovariateSpec::linear("sex"), None, &tight()).unwrap();
            assert_eq!(joint.levels.len(), 2);
            for level in &joint.levels {
                let part = data.filter(|p| p.covariates[0] == level.value);
                let alone = fit(&part, est, &tight()).unwrap();
                let (a, b) = (level.inference.proportions, alone.proportions());
                assert!((a.h2 - b.h2).abs() < 1e-8, "{est} sex={}: {} vs {}", level.value, a.h2, b.h2);
                assert!((a.c2 - b.c2).abs() < 1e-8);
                assert!((level.inference.se_h2 - alone.se_h2()).abs() < 1e-8, "{est} se");
                assert!((level.inference.se_c2 - alone.se_c2()).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn constant_covariate_is_reported_as_inestimable() {
    let mut data = sex_data(1);
    for p in &mut data.pairs {
        p.covariates[0] = 1.0;
    }
    for est in [Estimator::Gee2Nace, Estimator::Gee2Falconer] {
        match fit_with_variance_covariates(&data, est, &CovariateSpec::linear("sex"), None, &FitOptions::default()) {
            Err(Error::Singular(msg)) => assert!(msg.contains("sex"), "{msg}"),
            other => panic!("expected a singular design, got {other:?}"),
        }
    }
}

#[test]
fn classical_estimators_reject_variance_covariates() {
    let data = sex_data(2);
    for est in [Estimator::Nace, Estimator::Falconer] {
        let r = fit_with_variance_covariates(&data, est, &CovariateSpec::linear("sex"), None, &FitOptions::default());
        assert!(matches!(r, Err(Error::Usage(_))));
    }
    let r = fit_with_variance_covariates(
        &data,
        Estimator::Gee2Nace,
        &CovariateSpec::linear("age"),
        None,
        &FitOptions::default(),
    );
    assert!(matches!(r, Err(Error::MissingColumn(_))));
}

#[test]
fn contrast_uses_the_joint_covariance() {
    let data = sex_data(3);
    let f = fit_with_variance_covariates(&data, Estimator::Gee2Falconer, &CovariateSpec::linear("sex"), None, &FitOptions::default())
        .unwrap();
    let t = f.contrast(1, 0, Quantity::H2).unwrap();
    let (m, w) = (&f.levels[1].inference, &f.levels[0].inference);
    assert!((t.estimate - (m.proportions.h2 - w.proportions.h2)).abs() < 1e-12);
    // per-level fits are independent here, so the variance adds
    let indep = (m.se_h2.powi(2) + w.se_h2.powi(2)).sqrt();
    assert!((t.se - indep).abs() < 1e-8, "{} vs {indep}", t.se);
    assert!((t.z - t.estimate / t.se).abs() < 1e-12);
    assert!(t.p_value > 0.0 && t.p_value <= 1.0);

    let self_test = f.contrast(0, 0, Quantity::C2).unwrap();
    assert_eq!(self_test.estimate, 0.0);

    let d = f.levels[1].derived.as_ref().unwrap();
    let ratio = wald_contrast(&f.cov_matrix(), &d.h2, &f.levels[0].derived.as_ref().unwrap().h2, Contrast::Ratio).unwrap();
    assert!((ratio.estimate - m.proportions.h2 / w.proportions.h2).abs() < 1e-12);
}

#[test]
fn quadratic_covariate_levels_default_to_observed_values() {
    let mut pairs = Vec::new();
    let src = sex_data(4);
    for (i, p) in src.pairs.iter().enumerate() {
        let age = [17.0, 20.0, 24.0][i % 3];
        pairs.push(TwinPair::new(p.y1, p.y2, p.zygosity).with_covariates(vec![age]));
    }
    let data = TwinDataset::new(pairs, vec!["age".into()]).unwrap();
    let f = fit_with_variance_covariates(&data, Estimator::Gee2Falconer, &CovariateSpec::quadratic("age"), None, &FitOptions::default())
        .unwrap();
    let values: Vec<f64> = f.levels.iter().map(|l| l.value).collect();
    assert_eq!(values, vec![17.0, 20.0, 24.0]);
    assert_eq!(f.design_labels.len(), 6);
}
