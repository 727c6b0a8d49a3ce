#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twingee::simulate::{replicate_rng, simulate_unequal_var_normal, Scenario};
use twingee::{AceParams, TwinDataset, TwinPair, Zygosity};

/// Bivariate normal twins with the same components in both groups.
pub fn normal_twins(seed: u64, n_mz: usize, n_dz: usize, alpha: AceParams) -> TwinDataset {
    let s = Scenario::UnequalVarNormal {
        n_mz,
        n_dz,
        alpha_mz: alpha,
        alpha_dz: alpha,
        require_equal_proportions: false,
    };
    simulate_unequal_var_normal(&s, &mut replicate_rng(seed, 0)).unwrap()
}

/// Sample mean and Monte Carlo SE of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn group(data: &TwinDataset, z: Zygosity) -> Vec<&TwinPair> {
    data.pairs.iter().filter(|p| p.zygosity == z).collect()
}

/// Golden-section maximizer of a unimodal function on [lo, hi].
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Grid search then golden refinement around the best grid cell.
pub fn grid_golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize, tol: f64) -> f64 {
    let step = (hi - lo) / grid as f64;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 1..grid {
        let x = lo + step * i as f64;
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    let a = (best.1 - step).max(lo);
    let b = (best.1 + step).min(hi);
    golden_max(f, a, b, tol)
}

pub struct GroupStats {
    pub n: f64,
    pub sum_sq: f64,
    pub cross: f64,
}

pub fn stats(data: &TwinDataset, z: Zygosity) -> GroupStats {
    let mut s = GroupStats {
        n: 0.0,
        sum_sq: 0.0,
        cross: 0.0,
    };
    for p in data.pairs.iter().filter(|p| p.zygosity == z) {
        s.n += 1.0;
        s.sum_sq += p.y1 * p.y1 + p.y2 * p.y2;
        s.cross += p.y1 * p.y2;
    }
    s
}

/// Log-likelihood of one group under N(0, [[t, c], [c, t]]), constants dropped.
pub fn group_loglik(s: &GroupStats, t: f64, c: f64) -> f64 {
    let det = t * t - c * c;
    if !(t > 0.0 && det > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * s.n * det.ln() - 0.5 * (t * s.sum_sq - 2.0 * c * s.cross) / det
}

pub fn loglik(mz: &GroupStats, dz: &GroupStats, a: &AceParams) -> f64 {
    group_loglik(mz, a.total(), a.covariance(Zygosity::Mz)) + group_loglik(dz, a.total(), a.covariance(Zygosity::Dz))
}

/// Profile maximization: for each total variance t the two groups separate
/// into one-dimensional problems in their covariance.
pub fn direct_mle(data: &TwinDataset) -> AceParams {
    let mz = stats(data, Zygosity::Mz);
    let dz = stats(data, Zygosity::Dz);
    let best_c = |s: &GroupStats, t: f64| grid_golden_max(|c| group_loglik(s, t, c), -t, t, 400, 1e-13 * t);
    let profile = |t: f64| group_loglik(&mz, t, best_c(&mz, t)) + group_loglik(&dz, t, best_c(&dz, t));
    let scale = (mz.sum_sq + dz.sum_sq) / (2.0 * (mz.n + dz.n));
    let t = grid_golden_max(profile, 0.2 * scale, 5.0 * scale, 200, 1e-12 * scale);
    let (c_mz, c_dz) = (best_c(&mz, t), best_c(&dz, t));
    AceParams::new(2.0 * (c_mz - c_dz), 2.0 * c_dz - c_mz, t - c_mz)
}

/// Normal pairs with random size, correlation, scale and offset per group.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> TwinDataset {
    let mut pairs = Vec::new();
    for z in [Zygosity::Mz, Zygosity::Dz] {
        let n = rng.random_range(30..300);
        let rho: f64 = rng.random_range(-0.3..0.9);
        let sd: f64 = rng.random_range(0.3..3.0);
        let shift: f64 = rng.random_range(-1.0..1.0);
        for _ in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            let y1 = sd * u + shift;
            let y2 = sd * (rho * u + (1.0 - rho * rho).sqrt() * v) + shift;
            pairs.push(TwinPair::new(y1, y2, z));
        }
    }
    TwinDataset::new(pairs, vec![]).unwrap()
}

/// ((Σy1² + Σy2²)/2n, Σy1y2/n) for one group, written out independently.
pub fn moments(data: &TwinDataset, z: Zygosity) -> (f64, f64) {
    let g: Vec<&TwinPair> = data.pairs.iter().filter(|p| p.zygosity == z).collect();
    let n = g.len() as f64;
    let ss: f64 = g.iter().map(|p| p.y1 * p.y1 + p.y2 * p.y2).sum();
    let cp: f64 = g.iter().map(|p| p.y1 * p.y2).sum();
    (ss / (2.0 * n), cp / n)
}
