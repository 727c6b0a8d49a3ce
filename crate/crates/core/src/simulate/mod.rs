//! Scenario generators for twin-pair simulation studies.
//!
//! Every generator is a pure function of its configuration and RNG. Studies
//! derive one ChaCha stream per replicate from a single seed, so replicates
//! can run in any order or in parallel and still reproduce bit-for-bit.

mod lgp;

pub use lgp::{lgp_ln_pmf, lgp_mean, lgp_pmf, lgp_sample, lgp_variance, LgpSampler, TAIL_CAP};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{TwinDataset, TwinPair, Zygosity};
use crate::error::{Error, Result};
use crate::estimators::AceProportions;
use crate::moments::{AceCovariateParams, AceParams, CorrLink, VarianceLink};

pub type SimRng = ChaCha8Rng;

/// RNG for replicate `r` of a study seeded with `seed`.
pub fn replicate_rng(seed: u64, r: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Age-varying Falconer generator: for design
/// x = (1, z, age, (age − c)², age·z, (age − c)²·z) with c the grid mean,
/// g(σ²_z) = v·x and h(ρ_z) = p·x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeFalconerConfig {
    pub n_mz: usize,
    pub n_dz: usize,
    #[serde(default = "default_ages")]
    pub ages: Vec<f64>,
    pub v: [f64; 6],
    pub p: [f64; 6],
    #[serde(default)]
    pub var_link: VarianceLink,
    #[serde(default)]
    pub corr_link: CorrLink,
}

fn default_ages() -> Vec<f64> {
    vec![17.0, 20.0, 24.0, 29.0]
}

impl AgeFalconerConfig {
    pub fn center(&self) -> f64 {
        self.ages.iter().sum::<f64>() / self.ages.len() as f64
    }

    fn row(&self, z: Zygosity, age: f64) -> [f64; 6] {
        let zi = z.indicator();
        let sq = (age - self.center()).powi(2);
        [1.0, zi, age, sq, age * zi, sq * zi]
    }

    /// (σ²_z, ρ_z) at one age.
    pub fn moments(&self, z: Zygosity, age: f64) -> (f64, f64) {
        let x = self.row(z, age);
        let ev: f64 = self.v.iter().zip(&x).map(|(a, b)| a * b).sum();
        let ep: f64 = self.p.iter().zip(&x).map(|(a, b)| a * b).sum();
        (self.var_link.inverse(ev), self.corr_link.inverse(ep))
    }

    pub fn truth_at(&self, age: f64) -> AceProportions {
        let (_, r_mz) = self.moments(Zygosity::Mz, age);
        let (_, r_dz) = self.moments(Zygosity::Dz, age);
        AceProportions::new(2.0 * (r_mz - r_dz), 2.0 * r_dz - r_mz)
    }

    /// Proportions implied by the age-pooled moments (ages equally likely).
    pub fn pooled_truth(&self) -> AceProportions {
        let r = |z| {
            let (mut v, mut c) = (0.0, 0.0);
            for &age in &self.ages {
                let (s, r) = self.moments(z, age);
                v += s;
                c += s * r;
            }
            c / v
        };
        let (r_mz, r_dz) = (r(Zygosity::Mz), r(Zygosity::Dz));
        AceProportions::new(2.0 * (r_mz - r_dz), 2.0 * r_dz - r_mz)
    }

    fn validate(&self) -> Result<()> {
        if self.ages.is_empty() {
            return Err(Error::Config("age grid is empty".into()));
        }
        let mut bad = Vec::new();
        for &age in &self.ages {
            for z in [Zygosity::Mz, Zygosity::Dz] {
                let (s, r) = self.moments(z, age);
                if !(s > 0.0 && s.is_finite() && r.abs() < 1.0) {
                    bad.push(format!("{age} ({z}: variance {s}, correlation {r})"));
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!(
                "age model leaves the valid range at: {}",
                bad.join("; ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    /// Bivariate t with scale matrix from the NACE structure.
    Mvt {
        n_mz: usize,
        n_dz: usize,
        alpha: AceParams,
        df: f64,
    },
    /// Additive bivariate Lagrangian Poisson counts.
    Blgp {
        n_mz: usize,
        n_dz: usize,
        alpha: AceParams,
        lambda: f64,
    },
    /// Bivariate normal with separate component sets for MZ and DZ pairs.
    UnequalVarNormal {
        n_mz: usize,
        n_dz: usize,
        alpha_mz: AceParams,
        alpha_dz: AceParams,
        #[serde(default)]
        require_equal_proportions: bool,
    },
    /// Bivariate normal with sex-dependent components; `n_mz`/`n_dz` are per sex.
    SexNormal {
        n_mz: usize,
        n_dz: usize,
        params: AceCovariateParams,
    },
    AgeFalconer(AgeFalconerConfig),
}

/// The sex-varying coefficients used in the sex-stratified study.
pub const SEX_PARAMS: AceCovariateParams = AceCovariateParams {
    a0: 0.3,
    a1: 0.3,
    c0: 0.4,
    c1: -0.2,
    e0: 0.3,
    e1: -0.1,
    link: VarianceLink::Identity,
};

pub const DEFAULT_ALPHA: AceParams = AceParams::new(0.5, 0.3, 0.2);

impl Scenario {
    pub fn mvt_default() -> Self {
        Scenario::Mvt {
            n_mz: 700,
            n_dz: 700,
            alpha: DEFAULT_ALPHA,
            df: 4.5,
        }
    }

    pub fn blgp_default() -> Self {
        Scenario::Blgp {
            n_mz: 700,
            n_dz: 700,
            alpha: DEFAULT_ALPHA,
            lambda: 0.35,
        }
    }

    pub fn unequal_var_default() -> Self {
        Scenario::UnequalVarNormal {
            n_mz: 700,
            n_dz: 700,
            alpha_mz: AceParams::new(0.3, 0.18, 0.12),
            alpha_dz: DEFAULT_ALPHA,
            require_equal_proportions: true,
        }
    }

    pub fn sex_default() -> Self {
        Scenario::SexNormal {
            n_mz: 450,
            n_dz: 450,
            params: SEX_PARAMS,
        }
    }

    /// Constant h² = 0.5 across ages while c² declines with age.
    pub fn age_default() -> Self {
        Scenario::AgeFalconer(AgeFalconerConfig {
            n_mz: 700,
            n_dz: 700,
            ages: default_ages(),
            v: [0.6, 0.0, 0.02, 0.0, 0.0, 0.0],
            p: [0.72, 0.25, -0.01, 0.0, 0.0, 0.0],
            var_link: VarianceLink::Identity,
            corr_link: CorrLink::Identity,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Mvt { .. } => "mvt",
            Scenario::Blgp { .. } => "blgp",
            Scenario::UnequalVarNormal { .. } => "unequal_var_normal",
            Scenario::SexNormal { .. } => "sex_normal",
            Scenario::AgeFalconer(_) => "age_falconer",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Mvt { alpha, df, .. } => {
                check_ace(alpha)?;
                if !(*df > 2.0) {
                    return Err(Error::Config(format!(
                        "t degrees of freedom must exceed 2 for a finite covariance, got {df}"
                    )));
                }
            }
            Scenario::Blgp { alpha, lambda, .. } => {
                if !(*lambda > 0.0 && *lambda < 1.0) {
                    return Err(Error::Config(format!(
                        "bivariate LGP dispersion must lie in (0, 1), got {lambda}"
                    )));
                }
                let rates = blgp_rates(alpha);
                for (z, q0, qi) in [(Zygosity::Mz, rates.0, rates.1), (Zygosity::Dz, rates.2, rates.3)] {
                    if !(q0 > 0.0 && qi > 0.0) {
                        return Err(Error::Config(format!(
                            "{z} LGP component rates must be positive (shared {q0}, individual {qi})"
                        )));
                    }
                }
            }
            Scenario::UnequalVarNormal {
                alpha_mz,
                alpha_dz,
                require_equal_proportions,
                ..
            } => {
                check_ace(alpha_mz)?;
                check_ace(alpha_dz)?;
                if *require_equal_proportions
                    && ((alpha_mz.h2() - alpha_dz.h2()).abs() > 1e-12
                        || (alpha_mz.c2() - alpha_dz.c2()).abs() > 1e-12)
                {
                    return Err(Error::Config(format!(
                        "MZ proportions ({:.4}, {:.4}) differ from DZ proportions ({:.4}, {:.4})",
                        alpha_mz.h2(),
                        alpha_mz.c2(),
                        alpha_dz.h2(),
                        alpha_dz.c2()
                    )));
                }
            }
            Scenario::SexNormal { params, .. } => {
                check_ace(&params.at(0.0))?;
                check_ace(&params.at(1.0))?;
            }
            Scenario::AgeFalconer(cfg) => cfg.validate()?,
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TwinDataset> {
        match self {
            Scenario::Mvt { n_mz, n_dz, alpha, df } => simulate_mvt(*n_mz, *n_dz, alpha, *df, rng),
            Scenario::Blgp {
                n_mz,
                n_dz,
                alpha,
                lambda,
            } => simulate_blgp(*n_mz, *n_dz, alpha, *lambda, rng),
            Scenario::UnequalVarNormal { .. } => simulate_unequal_var_normal(self, rng),
            Scenario::SexNormal { n_mz, n_dz, params } => simulate_sex_normal(*n_mz, *n_dz, params, rng),
            Scenario::AgeFalconer(cfg) => simulate_age_falconer(cfg, rng),
        }
    }

    /// Name of the covariate that varies h², if any.
    pub fn covariate(&self) -> Option<&'static str> {
        match self {
            Scenario::SexNormal { .. } => Some("sex"),
            Scenario::AgeFalconer(_) => Some("age"),
            _ => None,
        }
    }

    /// True proportions at a covariate level, or, with `None`, those implied
    /// by the moments pooled over covariate levels.
    pub fn truth(&self, level: Option<f64>) -> AceProportions {
        let from = |a: &AceParams| AceProportions::new(a.h2(), a.c2());
        match (self, level) {
            (Scenario::Mvt { alpha, .. } | Scenario::Blgp { alpha, .. }, _) => from(alpha),
            (Scenario::UnequalVarNormal { alpha_dz, .. }, _) => from(alpha_dz),
            (Scenario::SexNormal { params, .. }, Some(sex)) => from(&params.at(sex)),
            (Scenario::SexNormal { params, .. }, None) => {
                // equal cell sizes per sex, so pooled moments are plain averages
                let (m, f) = (params.at(1.0), params.at(0.0));
                let total = m.total() + f.total();
                let r_mz = (m.covariance(Zygosity::Mz) + f.covariance(Zygosity::Mz)) / total;
                let r_dz = (m.covariance(Zygosity::Dz) + f.covariance(Zygosity::Dz)) / total;
                AceProportions::new(2.0 * (r_mz - r_dz), 2.0 * r_dz - r_mz)
            }
            (Scenario::AgeFalconer(cfg), Some(age)) => cfg.truth_at(age),
            (Scenario::AgeFalconer(cfg), None) => cfg.pooled_truth(),
        }
    }

    /// Covariate levels at which a covariate study evaluates the proportions.
    pub fn levels(&self) -> Vec<f64> {
        match self {
            Scenario::SexNormal { .. } => vec![0.0, 1.0],
            Scenario::AgeFalconer(cfg) => {
                let mut a = cfg.ages.clone();
                a.sort_by(|x, y| x.total_cmp(y));
                a.dedup();
                a
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ScenarioConfig { scenario, seed }
    }

    pub fn generate(&self) -> Result<TwinDataset> {
        self.generate_replicate(0)
    }

    pub fn generate_replicate(&self, r: u64) -> Result<TwinDataset> {
        self.scenario.validate()?;
        self.scenario.generate(&mut replicate_rng(self.seed, r))
    }
}

fn check_ace(a: &AceParams) -> Result<()> {
    let vals = [a.sigma2_a, a.sigma2_c, a.sigma2_e];
    if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || !(a.total() > 0.0) {
        return Err(Error::Config(format!(
            "variance components must be non-negative with positive total, got ({}, {}, {})",
            a.sigma2_a, a.sigma2_c, a.sigma2_e
        )));
    }
    Ok(())
}

/// Draws (y1, y2) ~ N(0, [[t, c], [c, t]]).
fn bivariate_normal<R: Rng + ?Sized>(t: f64, c: f64, rng: &mut R) -> (f64, f64) {
    let l11 = t.sqrt();
    let l21 = c / l11;
    let l22 = (t - l21 * l21).max(0.0).sqrt();
    let u: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    (l11 * u, l21 * u + l22 * v)
}

fn normal_pairs<R: Rng + ?Sized>(
    out: &mut Vec<TwinPair>,
    n: usize,
    z: Zygosity,
    alpha: &AceParams,
    covariates: &[f64],
    rng: &mut R,
) {
    let (t, c) = (alpha.total(), alpha.covariance(z));
    for _ in 0..n {
        let (y1, y2) = bivariate_normal(t, c, rng);
        out.push(TwinPair::new(y1, y2, z).with_covariates(covariates.to_vec()));
    }
}

/// Bivariate t pairs: y = x·√(df/g), x ~ N(0, Σ_z), g ~ χ²(df). Σ_z is the
/// scale matrix, so Cov(y) = Σ_z·df/(df − 2); proportions are unaffected.
pub fn simulate_mvt<R: Rng + ?Sized>(
    n_mz: usize,
    n_dz: usize,
    alpha: &AceParams,
    df: f64,
    rng: &mut R,
) -> Result<TwinDataset> {
    Scenario::Mvt {
        n_mz,
        n_dz,
        alpha: *alpha,
        df,
    }
    .validate()?;
    let chi = ChiSquared::new(df).map_err(|e| Error::Config(e.to_string()))?;
    let mut pairs = Vec::with_capacity(n_mz + n_dz);
    for (z, n) in [(Zygosity::Mz, n_mz), (Zygosity::Dz, n_dz)] {
        let (t, c) = (alpha.total(), alpha.covariance(z));
        for _ in 0..n {
            let (x1, x2) = bivariate_normal(t, c, rng);
            let g: f64 = chi.sample(rng);
            let k = (df / g).sqrt();
            pairs.push(TwinPair::new(x1 * k, x2 * k, z));
        }
    }
    TwinDataset::new(pairs, Vec::new())
}

/// (MZ shared, MZ individual, DZ shared, DZ individual) LGP rates.
fn blgp_rates(a: &AceParams) -> (f64, f64, f64, f64) {
    (
        a.sigma2_a + a.sigma2_c,
        a.sigma2_e,
        0.5 * a.sigma2_a + a.sigma2_c,
        0.5 * a.sigma2_a + a.sigma2_e,
    )
}

/// Additive bivariate LGP counts: Y_i = Q0 + Q_i with a shared Q0.
pub fn simulate_blgp<R: Rng + ?Sized>(
    n_mz: usize,
    n_dz: usize,
    alpha: &AceParams,
    lambda: f64,
    rng: &mut R,
) -> Result<TwinDataset> {
    Scenario::Blgp {
        n_mz,
        n_dz,
        alpha: *alpha,
        lambda,
    }
    .validate()?;
    let (mz0, mzi, dz0, dzi) = blgp_rates(alpha);
    let mut pairs = Vec::with_capacity(n_mz + n_dz);
    for (z, n, shared, own) in [(Zygosity::Mz, n_mz, mz0, mzi), (Zygosity::Dz, n_dz, dz0, dzi)] {
        let q0 = LgpSampler::new(shared, lambda)?;
        let qi = LgpSampler::new(own, lambda)?;
        for _ in 0..n {
            let s = q0.sample(rng);
            let y1 = s + qi.sample(rng);
            let y2 = s + qi.sample(rng);
            pairs.push(TwinPair::new(y1 as f64, y2 as f64, z));
        }
    }
    TwinDataset::new(pairs, Vec::new())
}

/// Bivariate normal pairs with group-specific components.
pub fn simulate_unequal_var_normal<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<TwinDataset> {
    let Scenario::UnequalVarNormal {
        n_mz,
        n_dz,
        alpha_mz,
        alpha_dz,
        ..
    } = scenario
    else {
        return Err(Error::Usage("expected an unequal_var_normal scenario".into()));
    };
    scenario.validate()?;
    let mut pairs = Vec::with_capacity(n_mz + n_dz);
    normal_pairs(&mut pairs, *n_mz, Zygosity::Mz, alpha_mz, &[], rng);
    normal_pairs(&mut pairs, *n_dz, Zygosity::Dz, alpha_dz, &[], rng);
    TwinDataset::new(pairs, Vec::new())
}

/// Normal pairs in each sex × zygosity cell; covariate `sex` is 1 for males.
pub fn simulate_sex_normal<R: Rng + ?Sized>(
    n_mz: usize,
    n_dz: usize,
    params: &AceCovariateParams,
    rng: &mut R,
) -> Result<TwinDataset> {
    Scenario::SexNormal {
        n_mz,
        n_dz,
        params: *params,
    }
    .validate()?;
    let mut pairs = Vec::with_capacity(2 * (n_mz + n_dz));
    for sex in [1.0, 0.0] {
        let a = params.at(sex);
        normal_pairs(&mut pairs, n_mz, Zygosity::Mz, &a, &[sex], rng);
        normal_pairs(&mut pairs, n_dz, Zygosity::Dz, &a, &[sex], rng);
    }
    TwinDataset::new(pairs, vec!["sex".into()])
}

/// Normal pairs whose variance and correlation follow the quadratic age model.
/// Records covariates `age` and `age2` = (age − grid mean)².
pub fn simulate_age_falconer<R: Rng + ?Sized>(cfg: &AgeFalconerConfig, rng: &mut R) -> Result<TwinDataset> {
    cfg.validate()?;
    let center = cfg.center();
    let mut pairs = Vec::with_capacity(cfg.n_mz + cfg.n_dz);
    for (z, n) in [(Zygosity::Mz, cfg.n_mz), (Zygosity::Dz, cfg.n_dz)] {
        for _ in 0..n {
            let age = cfg.ages[rng.random_range(0..cfg.ages.len())];
            let (s, r) = cfg.moments(z, age);
            let (y1, y2) = bivariate_normal(s, s * r, rng);
            pairs.push(TwinPair::new(y1, y2, z).with_covariates(vec![age, (age - center).powi(2)]));
        }
    }
    TwinDataset::new(pairs, vec!["age".into(), "age2".into()])
}
