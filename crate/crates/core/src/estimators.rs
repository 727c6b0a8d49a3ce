//! Estimator façade: classical NACE, classical Falconer, GEE2-NACE and
//! GEE2-Falconer, producing h², c², e² with delta-method standard errors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{TwinDataset, Zygosity};
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{
    CorrLink, CovariateTerm, MomentModel, Parameterization, VarianceLink, WorkingCov,
};
use crate::solver::{self, SolveOutcome, SolverConfig};

/// Two-sided 95% normal quantile used for every Wald interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "NACE")]
    Nace,
    #[serde(rename = "GEE2-NACE")]
    Gee2Nace,
    #[serde(rename = "Falconer")]
    Falconer,
    #[serde(rename = "GEE2-Falconer")]
    Gee2Falconer,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Nace,
        Estimator::Gee2Nace,
        Estimator::Falconer,
        Estimator::Gee2Falconer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Nace => "NACE",
            Estimator::Gee2Nace => "GEE2-NACE",
            Estimator::Falconer => "Falconer",
            Estimator::Gee2Falconer => "GEE2-Falconer",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "nace" => Ok(Estimator::Nace),
            "gee2nace" => Ok(Estimator::Gee2Nace),
            "falconer" => Ok(Estimator::Falconer),
            "gee2falconer" => Ok(Estimator::Gee2Falconer),
            _ => Err(Error::Usage(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Variance proportions. `e2` is always `1 − h2 − c2`; nothing is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceProportions {
    pub h2: f64,
    pub c2: f64,
    pub e2: f64,
}

impl AceProportions {
    pub fn new(h2: f64, c2: f64) -> Self {
        AceProportions {
            h2,
            c2,
            e2: 1.0 - h2 - c2,
        }
    }

    pub fn in_unit_range(&self) -> bool {
        [self.h2, self.c2, self.e2].iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelations {
    pub r_mz: f64,
    pub r_dz: f64,
    pub n_mz: usize,
    pub n_dz: usize,
}

/// Product-moment correlation of (y1, y2) with group means removed.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 2 pairs, have {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let m1 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let m2 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (da, db) = (a - m1, b - m2);
        s11 += da * da;
        s22 += db * db;
        s12 += da * db;
    }
    if s11 == 0.0 || s22 == 0.0 {
        return Err(Error::Degenerate("zero variance in a twin coordinate".into()));
    }
    Ok((s12 / (s11.sqrt() * s22.sqrt())).clamp(-1.0, 1.0))
}

fn group_pairs(data: &TwinDataset, z: Zygosity) -> Vec<(f64, f64)> {
    data.pairs
        .iter()
        .filter(|p| p.zygosity == z)
        .map(|p| (p.y1, p.y2))
        .collect()
}

/// Per-zygosity correlations. With `pooled` the GEE2-Falconer closed form
/// ĉov_z / σ̂²_z is used instead of Pearson's r.
pub fn group_correlations(data: &TwinDataset, pooled: bool) -> Result<GroupCorrelations> {
    data.require_both_groups()?;
    let corr = |z: Zygosity| -> Result<f64> {
        if pooled {
            let (s, c) = solver::pooled_moments(data, z);
            if !(s > 0.0) {
                return Err(Error::Degenerate(format!("{z} pairs have zero second moment")));
            }
            Ok(c / s)
        } else {
            pearson(&group_pairs(data, z))
        }
    };
    Ok(GroupCorrelations {
        r_mz: corr(Zygosity::Mz)?,
        r_dz: corr(Zygosity::Dz)?,
        n_mz: data.n_mz(),
        n_dz: data.n_dz(),
    })
}

pub fn falconer_point(r: &GroupCorrelations) -> AceProportions {
    AceProportions::new(2.0 * (r.r_mz - r.r_dz), 2.0 * r.r_dz - r.r_mz)
}

/// Large-sample variance of a correlation coefficient, (1 − r²)² / n.
fn corr_variance(r: f64, n: usize) -> f64 {
    let one_minus = 1.0 - r * r;
    one_minus * one_minus / n as f64
}

/// (SE(ĥ²), SE(ĉ²)) from the asymptotic variance of Pearson's r.
pub fn falconer_se(r: &GroupCorrelations) -> (f64, f64) {
    let v_mz = corr_variance(r.r_mz, r.n_mz);
    let v_dz = corr_variance(r.r_dz, r.n_dz);
    ((4.0 * (v_mz + v_dz)).sqrt(), (4.0 * v_dz + v_mz).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub var_link: VarianceLink,
    pub corr_link: CorrLink,
    pub solver: SolverConfig,
    /// Classical Falconer uses ĉov_z/σ̂²_z instead of Pearson's r.
    pub pooled_corr: bool,
    /// Override of the parameterization's default working covariance.
    pub working_cov: Option<WorkingCov>,
    /// Sample size entering the classical Falconer standard errors.
    #[serde(default)]
    pub falconer_count: FalconerCount,
}

/// What `N_z` counts in the classical Falconer variance (1 − r²)²/N_z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FalconerCount {
    /// Twin pairs per zygosity group.
    #[default]
    Pairs,
    /// Individuals (two per pair), which shrinks the SEs by √2.
    Individuals,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            var_link: VarianceLink::Identity,
            corr_link: CorrLink::Identity,
            solver: SolverConfig::default(),
            pooled_corr: false,
            working_cov: None,
            falconer_count: FalconerCount::Pairs,
        }
    }
}

impl FitOptions {
    fn nace_model(&self) -> MomentModel {
        let m = MomentModel::nace().with_links(self.var_link, self.corr_link);
        match self.working_cov {
            Some(w) => m.with_working_cov(w),
            None => m,
        }
    }

    fn falconer_model(&self) -> MomentModel {
        let m = MomentModel::falconer().with_links(self.var_link, self.corr_link);
        match self.working_cov {
            Some(w) => m.with_working_cov(w),
            None => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub final_relative_change: f64,
    pub score_norm: f64,
    pub n_mz: usize,
    pub n_dz: usize,
    /// Sample variance of MZ individuals over that of DZ individuals.
    pub variance_ratio_mz_dz: Option<f64>,
    /// Some estimated variance component (or σ²_z) is negative.
    pub negative_components: bool,
    /// Some proportion lies outside [0, 1] or some correlation outside [−1, 1].
    pub out_of_range: bool,
}

impl Diagnostics {
    fn base(data: &TwinDataset) -> Self {
        let ratio = match (
            data.sample_variance(Zygosity::Mz),
            data.sample_variance(Zygosity::Dz),
        ) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        Diagnostics {
            converged: true,
            iterations: 0,
            final_update_norm: 0.0,
            final_relative_change: 0.0,
            score_norm: 0.0,
            n_mz: data.n_mz(),
            n_dz: data.n_dz(),
            variance_ratio_mz_dz: ratio,
            negative_components: false,
            out_of_range: false,
        }
    }

    fn with_outcome(mut self, o: &SolveOutcome) -> Self {
        self.converged = o.converged;
        self.iterations = o.iterations;
        self.final_update_norm = o.final_update_norm;
        self.final_relative_change = o.final_relative_change;
        self.score_norm = o.score_norm;
        self
    }
}

/// A scalar function of the parameters with its gradient at the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantity {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl DerivedQuantity {
    pub fn se(&self, cov: &DMatrix<f64>) -> f64 {
        linalg::quad_form(cov, &self.gradient).max(0.0).sqrt()
    }
}

/// h², c², e² as functions of α at one covariate level.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedProportions {
    pub h2: DerivedQuantity,
    pub c2: DerivedQuantity,
    pub e2: DerivedQuantity,
    /// Any implied variance component / σ²_z negative.
    pub negative: bool,
    /// Any implied correlation outside [−1, 1].
    pub bad_corr: bool,
}

/// Evaluates the proportions and their analytic gradients for a model at the
/// covariate-term values `terms` (empty for models without covariates).
pub fn derived_proportions(model: &MomentModel, alpha: &[f64], terms: &[f64]) -> DerivedProportions {
    let p = model.design_len();
    let q = model.dim();
    let dot = |block: &[f64], row: &[f64]| -> f64 { block.iter().zip(row).map(|(a, x)| a * x).sum() };
    let mut gh = vec![0.0; q];
    let mut gc = vec![0.0; q];
    let (h2, c2, negative, bad_corr);

    match model.parameterization {
        Parameterization::Nace => {
            let mut row = vec![0.0; p];
            model.design_row_from_terms(Zygosity::Dz, terms, &mut row);
            let link = model.var_link;
            let eta = [
                dot(&alpha[..p], &row),
                dot(&alpha[p..2 * p], &row),
                dot(&alpha[2 * p..], &row),
            ];
            let s = eta.map(|e| link.inverse(e));
            let ds = eta.map(|e| link.inverse_deriv(e));
            let t = s[0] + s[1] + s[2];
            h2 = s[0] / t;
            c2 = s[1] / t;
            // ∂(s_k/T)/∂s_m = (δ_km T − s_k)/T²
            for m in 0..3 {
                let dh = (if m == 0 { t } else { 0.0 } - s[0]) / (t * t);
                let dc = (if m == 1 { t } else { 0.0 } - s[1]) / (t * t);
                for j in 0..p {
                    gh[m * p + j] = dh * ds[m] * row[j];
                    gc[m * p + j] = dc * ds[m] * row[j];
                }
            }
            negative = s.iter().any(|v| *v < 0.0);
            bad_corr = false;
        }
        Parameterization::Falconer => {
            let mut row_mz = vec![0.0; p];
            let mut row_dz = vec![0.0; p];
            model.design_row_from_terms(Zygosity::Mz, terms, &mut row_mz);
            model.design_row_from_terms(Zygosity::Dz, terms, &mut row_dz);
            let (vl, cl) = (model.var_link, model.corr_link);
            let (e_mz, e_dz) = (dot(&alpha[p..], &row_mz), dot(&alpha[p..], &row_dz));
            let (r_mz, r_dz) = (cl.inverse(e_mz), cl.inverse(e_dz));
            let (d_mz, d_dz) = (cl.inverse_deriv(e_mz), cl.inverse_deriv(e_dz));
            h2 = 2.0 * (r_mz - r_dz);
            c2 = 2.0 * r_dz - r_mz;
            for j in 0..p {
                let gm = d_mz * row_mz[j];
                let gd = d_dz * row_dz[j];
                gh[p + j] = 2.0 * (gm - gd);
                gc[p + j] = 2.0 * gd - gm;
            }
            let s_mz = vl.inverse(dot(&alpha[..p], &row_mz));
            let s_dz = vl.inverse(dot(&alpha[..p], &row_dz));
            negative = s_mz < 0.0 || s_dz < 0.0;
            bad_corr = r_mz.abs() > 1.0 || r_dz.abs() > 1.0;
        }
    }
    let ge: Vec<f64> = gh.iter().zip(&gc).map(|(a, b)| -(a + b)).collect();
    DerivedProportions {
        h2: DerivedQuantity {
            value: h2,
            gradient: gh,
        },
        c2: DerivedQuantity {
            value: c2,
            gradient: gc,
        },
        e2: DerivedQuantity {
            value: 1.0 - h2 - c2,
            gradient: ge,
        },
        negative,
        bad_corr,
    }
}

fn ci(est: f64, se: f64) -> [f64; 2] {
    [est - Z_95 * se, est + Z_95 * se]
}

/// Proportions with standard errors and 95% Wald intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionInference {
    pub proportions: AceProportions,
    pub se_h2: f64,
    pub se_c2: f64,
    pub se_e2: f64,
    pub ci_h2: [f64; 2],
    pub ci_c2: [f64; 2],
    pub ci_e2: [f64; 2],
}

impl ProportionInference {
    fn from_derived(d: &DerivedProportions, cov: &DMatrix<f64>) -> Self {
        let (se_h2, se_c2, se_e2) = (d.h2.se(cov), d.c2.se(cov), d.e2.se(cov));
        let proportions = AceProportions::new(d.h2.value, d.c2.value);
        ProportionInference {
            ci_h2: ci(proportions.h2, se_h2),
            ci_c2: ci(proportions.c2, se_c2),
            ci_e2: ci(proportions.e2, se_e2),
            proportions,
            se_h2,
            se_c2,
            se_e2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: Estimator,
    pub param_names: Vec<String>,
    pub alpha_hat: Vec<f64>,
    /// Row-major q×q covariance of `alpha_hat`.
    pub cov_alpha: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub inference: ProportionInference,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub grad_h2: Vec<f64>,
    #[serde(skip)]
    pub grad_c2: Vec<f64>,
}

impl FitResult {
    pub fn proportions(&self) -> AceProportions {
        self.inference.proportions
    }

    pub fn se_h2(&self) -> f64 {
        self.inference.se_h2
    }

    pub fn se_c2(&self) -> f64 {
        self.inference.se_c2
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.cov_alpha)
    }
}

fn covariance_for(
    outcome: &SolveOutcome,
    n: usize,
    robust: bool,
) -> Result<DMatrix<f64>> {
    let cov = if robust {
        solver::sandwich_cov(outcome, n)
    } else {
        solver::model_based_cov(outcome, n)
    };
    match cov {
        Ok(c) => Ok(c),
        // a non-converged fit still yields a result; its SEs are undefined
        Err(_) if !outcome.converged => {
            let q = outcome.alpha_hat.len();
            Ok(DMatrix::from_element(q, q, f64::NAN))
        }
        Err(e) => Err(e),
    }
}

fn fit_moment_model(
    data: &TwinDataset,
    estimator: Estimator,
    model: &MomentModel,
    opts: &FitOptions,
    terms: &[f64],
) -> Result<(SolveOutcome, DMatrix<f64>, DerivedProportions)> {
    let alpha0 = solver::initial_alpha(data, model)?;
    let outcome = solver::solve(data, model, &alpha0, &opts.solver)?;
    let robust = estimator != Estimator::Nace;
    let cov = covariance_for(&outcome, data.len(), robust)?;
    let derived = derived_proportions(model, &outcome.alpha_hat, terms);
    Ok((outcome, cov, derived))
}

/// Fits one estimator to centered (or residualized) data.
pub fn fit(data: &TwinDataset, estimator: Estimator, opts: &FitOptions) -> Result<FitResult> {
    data.require_both_groups()?;
    let mut diagnostics = Diagnostics::base(data);
    match estimator {
        Estimator::Falconer => {
            let r = group_correlations(data, opts.pooled_corr)?;
            let props = falconer_point(&r);
            let r = match opts.falconer_count {
                FalconerCount::Pairs => r,
                FalconerCount::Individuals => GroupCorrelations {
                    n_mz: 2 * r.n_mz,
                    n_dz: 2 * r.n_dz,
                    ..r
                },
            };
            let (se_h2, se_c2) = falconer_se(&r);
            let v_mz = corr_variance(r.r_mz, r.n_mz);
            let v_dz = corr_variance(r.r_dz, r.n_dz);
            let cov = DMatrix::from_row_slice(2, 2, &[v_mz, 0.0, 0.0, v_dz]);
            let se_e2 = DerivedQuantity {
                value: props.e2,
                gradient: vec![1.0, -1.0],
            }
            .se(&cov);
            diagnostics.out_of_range = !props.in_unit_range();
            Ok(FitResult {
                estimator,
                param_names: vec!["r_mz".into(), "r_dz".into()],
                alpha_hat: vec![r.r_mz, r.r_dz],
                cov_alpha: linalg::to_rows(&cov),
                inference: ProportionInference {
                    proportions: props,
                    se_h2,
                    se_c2,
                    se_e2,
                    ci_h2: ci(props.h2, se_h2),
                    ci_c2: ci(props.c2, se_c2),
                    ci_e2: ci(props.e2, se_e2),
                },
                diagnostics,
                grad_h2: vec![2.0, -2.0],
                grad_c2: vec![-1.0, 2.0],
            })
        }
        Estimator::Nace | Estimator::Gee2Nace | Estimator::Gee2Falconer => {
            let model = if estimator == Estimator::Gee2Falconer {
                opts.falconer_model()
            } else {
                opts.nace_model()
            };
            let (outcome, cov, derived) = fit_moment_model(data, estimator, &model, opts, &[])?;
            let inference = ProportionInference::from_derived(&derived, &cov);
            diagnostics = diagnostics.with_outcome(&outcome);
            diagnostics.negative_components = derived.negative;
            diagnostics.out_of_range = derived.bad_corr || !inference.proportions.in_unit_range();
            Ok(FitResult {
                estimator,
                param_names: model.param_names(),
                alpha_hat: outcome.alpha_hat.clone(),
                cov_alpha: linalg::to_rows(&cov),
                inference,
                diagnostics,
                grad_h2: derived.h2.gradient,
                grad_c2: derived.c2.gradient,
            })
        }
    }
}

/// How a pair-level covariate enters the variance/correlation predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    /// One linear term (e.g. sex coded 0/1).
    Linear { name: String },
    /// x and (x − center)²; center defaults to the sample mean over pairs.
    Quadratic {
        name: String,
        #[serde(default)]
        center: Option<f64>,
    },
}

impl CovariateSpec {
    pub fn linear(name: &str) -> Self {
        CovariateSpec::Linear { name: name.into() }
    }

    pub fn quadratic(name: &str) -> Self {
        CovariateSpec::Quadratic {
            name: name.into(),
            center: None,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            CovariateSpec::Linear { name } | CovariateSpec::Quadratic { name, .. } => name,
        }
    }

    pub fn terms(&self, data: &TwinDataset) -> Result<Vec<CovariateTerm>> {
        let index = data.covariate_index(self.name())?;
        let name = self.name().to_string();
        Ok(match self {
            CovariateSpec::Linear { .. } => vec![CovariateTerm::Linear { index, name }],
            CovariateSpec::Quadratic { center, .. } => {
                let center = match center {
                    Some(c) => *c,
                    None if data.is_empty() => 0.0,
                    None => {
                        data.pairs.iter().map(|p| p.covariates[index]).sum::<f64>() / data.len() as f64
                    }
                };
                vec![
                    CovariateTerm::Linear {
                        index,
                        name: name.clone(),
                    },
                    CovariateTerm::CenteredSquare {
                        index,
                        name,
                        center,
                    },
                ]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    /// Covariate value the proportions are evaluated at.
    pub value: f64,
    #[serde(flatten)]
    pub inference: ProportionInference,
    #[serde(skip)]
    pub derived: Option<DerivedGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedGradients {
    pub h2: DerivedQuantity,
    pub c2: DerivedQuantity,
    pub e2: DerivedQuantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    H2,
    C2,
    E2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateFit {
    pub estimator: Estimator,
    pub covariate: String,
    pub param_names: Vec<String>,
    pub design_labels: Vec<String>,
    pub alpha_hat: Vec<f64>,
    pub cov_alpha: Vec<Vec<f64>>,
    pub levels: Vec<LevelEstimate>,
    pub diagnostics: Diagnostics,
}

impl CovariateFit {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.cov_alpha)
    }

    pub fn level(&self, value: f64) -> Option<&LevelEstimate> {
        self.levels.iter().find(|l| l.value == value)
    }

    fn quantity(&self, level: usize, which: Quantity) -> Result<&DerivedQuantity> {
        let l = self
            .levels
            .get(level)
            .ok_or_else(|| Error::Usage(format!("no level with index {level}")))?;
        let d = l
            .derived
            .as_ref()
            .ok_or_else(|| Error::Usage("level carries no gradient information".into()))?;
        Ok(match which {
            Quantity::H2 => &d.h2,
            Quantity::C2 => &d.c2,
            Quantity::E2 => &d.e2,
        })
    }

    /// Wald test of (quantity at level `a`) − (quantity at level `b`) = 0
    /// using the joint covariance of the single fit.
    pub fn contrast(&self, a: usize, b: usize, which: Quantity) -> Result<WaldTest> {
        wald_contrast(
            &self.cov_matrix(),
            self.quantity(a, which)?,
            self.quantity(b, which)?,
            Contrast::Difference,
        )
    }
}

/// Fits a GEE2 model whose variance (and, for Falconer, correlation)
/// predictors depend on a pair-level covariate, then evaluates h², c², e² at
/// each requested covariate value (default: every distinct observed value).
pub fn fit_with_variance_covariates(
    data: &TwinDataset,
    estimator: Estimator,
    covariate: &CovariateSpec,
    levels: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<CovariateFit> {
    data.require_both_groups()?;
    let base = match estimator {
        Estimator::Gee2Nace => opts.nace_model(),
        Estimator::Gee2Falconer => opts.falconer_model(),
        other => {
            return Err(Error::Usage(format!(
                "{other} does not support variance-level covariates; use GEE2-NACE or GEE2-Falconer"
            )))
        }
    };
    let terms = covariate.terms(data)?;
    let model = base.with_terms(terms);

    let p = model.design_len();
    let mut x = DMatrix::zeros(data.len(), p);
    let mut row = vec![0.0; p];
    for (i, pair) in data.pairs.iter().enumerate() {
        model.design_row(pair.zygosity, &pair.covariates, &mut row);
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }
    let dependent = linalg::dependent_columns(&x, 1e-9);
    if !dependent.is_empty() {
        let labels = model.design_labels();
        let names: Vec<&str> = dependent.iter().map(|&j| labels[j].as_str()).collect();
        return Err(Error::Singular(format!(
            "variance design is rank deficient; inestimable term(s): {}",
            names.join(", ")
        )));
    }

    let alpha0 = solver::initial_alpha(data, &model)?;
    let outcome = solver::solve(data, &model, &alpha0, &opts.solver)?;
    let cov = covariance_for(&outcome, data.len(), true)?;

    let index = data.covariate_index(covariate.name())?;
    let values: Vec<f64> = match levels {
        Some(v) => v.to_vec(),
        None => {
            let mut v: Vec<f64> = data.pairs.iter().map(|p| p.covariates[index]).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        }
    };

    let mut diagnostics = Diagnostics::base(data).with_outcome(&outcome);
    let mut out_levels = Vec::with_capacity(values.len());
    for value in values {
        let term_values: Vec<f64> = model.terms.iter().map(|t| t.value_at(value)).collect();
        let d = derived_proportions(&model, &outcome.alpha_hat, &term_values);
        let inference = ProportionInference::from_derived(&d, &cov);
        diagnostics.negative_components |= d.negative;
        diagnostics.out_of_range |= d.bad_corr || !inference.proportions.in_unit_range();
        out_levels.push(LevelEstimate {
            value,
            inference,
            derived: Some(DerivedGradients {
                h2: d.h2,
                c2: d.c2,
                e2: d.e2,
            }),
        });
    }

    Ok(CovariateFit {
        estimator,
        covariate: covariate.name().to_string(),
        param_names: model.param_names(),
        design_labels: model.design_labels(),
        alpha_hat: outcome.alpha_hat,
        cov_alpha: linalg::to_rows(&cov),
        levels: out_levels,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    /// a − b, null value 0.
    Difference,
    /// a / b, null value 1.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Delta-method Wald test of a contrast between two derived quantities from
/// one joint fit, using the full covariance (cross terms included).
pub fn wald_contrast(
    cov: &DMatrix<f64>,
    a: &DerivedQuantity,
    b: &DerivedQuantity,
    contrast: Contrast,
) -> Result<WaldTest> {
    let q = cov.nrows();
    if cov.ncols() != q || a.gradient.len() != q || b.gradient.len() != q {
        return Err(Error::Usage(format!(
            "gradient lengths ({}, {}) do not match the {}x{} covariance",
            a.gradient.len(),
            b.gradient.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let (estimate, null, grad): (f64, f64, Vec<f64>) = match contrast {
        Contrast::Difference => (
            a.value - b.value,
            0.0,
            a.gradient.iter().zip(&b.gradient).map(|(x, y)| x - y).collect(),
        ),
        Contrast::Ratio => {
            if b.value == 0.0 {
                return Err(Error::Domain("ratio contrast with zero denominator".into()));
            }
            let r = a.value / b.value;
            (
                r,
                1.0,
                a.gradient
                    .iter()
                    .zip(&b.gradient)
                    .map(|(x, y)| x / b.value - r * y / b.value)
                    .collect(),
            )
        }
    };
    let se = linalg::quad_form(cov, &grad).max(0.0).sqrt();
    let diff = estimate - null;
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(WaldTest {
        estimate,
        se,
        z,
        p_value,
    })
}
