//! The NACE point estimates must coincide with the maximum of the zero-mean
//! bivariate normal likelihood, found here by direct numerical search.

mod common;

use common::{direct_mle, loglik, normal_twins, stats};
use twingee::{center, fit, AceParams, CenterMode, Estimator, FitOptions, Zygosity};

#[test]
fn nace_matches_direct_likelihood_maximization() {
    let start = std::time::Instant::now();
    let truth = AceParams::new(0.5, 0.3, 0.2);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let data = center(&normal_twins(1000 + seed, 200, 200, truth), CenterMode::PerZygosity).unwrap();
        let f = fit(&data, Estimator::Nace, &FitOptions::default()).unwrap();
        assert!(f.diagnostics.converged);
        let oracle = direct_mle(&data);
        let oracle_v = [oracle.sigma2_a, oracle.sigma2_c, oracle.sigma2_e];
        for (a, b) in f.alpha_hat.iter().zip(oracle_v) {
            worst = worst.max((a - b).abs());
            assert!((a - b).abs() < 1e-4, "seed {seed}: solver {:?} vs oracle {oracle_v:?}", f.alpha_hat);
        }
        // the solver's point is at least as good as the search's
        let mz = stats(&data, Zygosity::Mz);
        let dz = stats(&data, Zygosity::Dz);
        let at = |v: &[f64]| loglik(&mz, &dz, &AceParams::new(v[0], v[1], v[2]));
        assert!(at(&f.alpha_hat) >= at(&oracle_v) - 1e-8);

        let g = fit(&data, Estimator::Gee2Nace, &FitOptions::default()).unwrap();
        assert_eq!(g.alpha_hat, f.alpha_hat);
    }
    let elapsed = start.elapsed();
    println!("max |solver - oracle| = {worst:.3e} over 20 datasets in {elapsed:?}");
    assert!(elapsed.as_secs_f64() < 10.0);
}
