//! Second-moment structures for a twin pair.
//!
//! Each pair contributes the vectorized sample moments γ = (y1², y2², y1·y2)
//! and the model supplies their expectation Γ(α), the Jacobian D = ∂Γ/∂αᵀ and
//! a working covariance Ω for γ. Two parameterizations are supported:
//!
//! * **NACE**: σ²_A, σ²_C, σ²_E shared by both zygosities, so
//!   Γ = (T, T, w·σ²_A + σ²_C) with T = σ²_A + σ²_C + σ²_E and kinship w.
//! * **Falconer**: a separate variance σ²_z and correlation ρ_z per zygosity,
//!   Γ = (σ²_z, σ²_z, σ²_z·ρ_z), with g(σ²_z) = v·x and h(ρ_z) = p·x on the
//!   design x = (1, z, covariate terms, covariate terms × z).
//!
//! Covariate terms enter every linear predictor. For NACE each component gets
//! its own coefficient block on (1, terms…).

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::data::{TwinPair, Zygosity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceLink {
    #[default]
    Identity,
    Log,
}

impl VarianceLink {
    pub fn link(self, sigma2: f64) -> f64 {
        match self {
            VarianceLink::Identity => sigma2,
            VarianceLink::Log => sigma2.ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            VarianceLink::Identity => eta,
            VarianceLink::Log => eta.exp(),
        }
    }

    /// d g⁻¹(η) / dη
    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            VarianceLink::Identity => 1.0,
            VarianceLink::Log => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrLink {
    #[default]
    Identity,
    FisherZ,
}

impl CorrLink {
    pub fn link(self, rho: f64) -> f64 {
        match self {
            CorrLink::Identity => rho,
            CorrLink::FisherZ => rho.atanh(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            CorrLink::Identity => eta,
            CorrLink::FisherZ => eta.tanh(),
        }
    }

    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            CorrLink::Identity => 1.0,
            CorrLink::FisherZ => {
                let t = eta.tanh();
                1.0 - t * t
            }
        }
    }
}

/// ACE variance components (trait units squared).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceParams {
    pub sigma2_a: f64,
    pub sigma2_c: f64,
    pub sigma2_e: f64,
}

impl AceParams {
    pub const fn new(sigma2_a: f64, sigma2_c: f64, sigma2_e: f64) -> Self {
        AceParams {
            sigma2_a,
            sigma2_c,
            sigma2_e,
        }
    }

    pub fn total(&self) -> f64 {
        self.sigma2_a + self.sigma2_c + self.sigma2_e
    }

    /// Within-pair covariance for the given zygosity.
    pub fn covariance(&self, z: Zygosity) -> f64 {
        z.kinship() * self.sigma2_a + self.sigma2_c
    }

    pub fn h2(&self) -> f64 {
        self.sigma2_a / self.total()
    }

    pub fn c2(&self) -> f64 {
        self.sigma2_c / self.total()
    }
}

/// Sex-varying ACE components: g(σ²_k) = k0 + k1·sex for k ∈ {A, C, E}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceCovariateParams {
    pub a0: f64,
    pub a1: f64,
    pub c0: f64,
    pub c1: f64,
    pub e0: f64,
    pub e1: f64,
    #[serde(default)]
    pub link: VarianceLink,
}

impl AceCovariateParams {
    /// Components at a covariate value (sex: 0 = female, 1 = male).
    pub fn at(&self, x: f64) -> AceParams {
        AceParams::new(
            self.link.inverse(self.a0 + self.a1 * x),
            self.link.inverse(self.c0 + self.c1 * x),
            self.link.inverse(self.e0 + self.e1 * x),
        )
    }
}

/// Falconer parameterization without covariates: (v0, v1, p0, p1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalconerParams {
    pub v0: f64,
    pub v1: f64,
    pub p0: f64,
    pub p1: f64,
    #[serde(default)]
    pub var_link: VarianceLink,
    #[serde(default)]
    pub corr_link: CorrLink,
}

impl FalconerParams {
    pub fn variance(&self, z: Zygosity) -> f64 {
        self.var_link.inverse(self.v0 + self.v1 * z.indicator())
    }

    pub fn correlation(&self, z: Zygosity) -> f64 {
        self.corr_link.inverse(self.p0 + self.p1 * z.indicator())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Nace,
    Falconer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingCov {
    Normal,
    Identity,
}

/// A pair-level covariate term entering the variance/correlation predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateTerm {
    /// The covariate value itself.
    Linear { index: usize, name: String },
    /// (x − center)².
    CenteredSquare {
        index: usize,
        name: String,
        center: f64,
    },
}

impl CovariateTerm {
    pub fn value(&self, covariates: &[f64]) -> f64 {
        match self {
            CovariateTerm::Linear { index, .. } => covariates[*index],
            CovariateTerm::CenteredSquare { index, center, .. } => {
                let d = covariates[*index] - center;
                d * d
            }
        }
    }

    /// Term value at a covariate value x (for level-wise evaluation).
    pub fn value_at(&self, x: f64) -> f64 {
        match self {
            CovariateTerm::Linear { .. } => x,
            CovariateTerm::CenteredSquare { center, .. } => (x - center) * (x - center),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CovariateTerm::Linear { name, .. } => name.clone(),
            CovariateTerm::CenteredSquare { name, .. } => format!("{name}^2"),
        }
    }

    pub fn covariate_index(&self) -> usize {
        match self {
            CovariateTerm::Linear { index, .. } | CovariateTerm::CenteredSquare { index, .. } => {
                *index
            }
        }
    }
}

/// The pluggable bundle consumed by the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentModel {
    pub parameterization: Parameterization,
    pub working_cov: WorkingCov,
    pub var_link: VarianceLink,
    pub corr_link: CorrLink,
    pub terms: Vec<CovariateTerm>,
    /// Multiplier on Ω. Point estimates do not depend on it.
    pub omega_scale: f64,
}

/// Γ and D for one pair at one parameter value. `jac[j]` is column j of D.
#[derive(Debug, Clone, Default)]
pub struct PairMoments {
    pub gamma: [f64; 3],
    pub jac: Vec<[f64; 3]>,
    row: Vec<f64>,
}

impl MomentModel {
    pub fn nace() -> Self {
        MomentModel {
            parameterization: Parameterization::Nace,
            working_cov: WorkingCov::Normal,
            var_link: VarianceLink::Identity,
            corr_link: CorrLink::Identity,
            terms: Vec::new(),
            omega_scale: 1.0,
        }
    }

    pub fn falconer() -> Self {
        MomentModel {
            parameterization: Parameterization::Falconer,
            working_cov: WorkingCov::Identity,
            ..MomentModel::nace()
        }
    }

    pub fn with_working_cov(mut self, w: WorkingCov) -> Self {
        self.working_cov = w;
        self
    }

    pub fn with_links(mut self, var_link: VarianceLink, corr_link: CorrLink) -> Self {
        self.var_link = var_link;
        self.corr_link = corr_link;
        self
    }

    pub fn with_terms(mut self, terms: Vec<CovariateTerm>) -> Self {
        self.terms = terms;
        self
    }

    pub fn with_omega_scale(mut self, c: f64) -> Self {
        self.omega_scale = c;
        self
    }

    /// Length of one linear-predictor design row.
    pub fn design_len(&self) -> usize {
        match self.parameterization {
            Parameterization::Nace => 1 + self.terms.len(),
            Parameterization::Falconer => 2 + 2 * self.terms.len(),
        }
    }

    /// Number of parameters q.
    pub fn dim(&self) -> usize {
        match self.parameterization {
            Parameterization::Nace => 3 * self.design_len(),
            Parameterization::Falconer => 2 * self.design_len(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let p = self.design_len();
        match self.parameterization {
            Parameterization::Nace if self.terms.is_empty() => {
                vec!["sigma2_a".into(), "sigma2_c".into(), "sigma2_e".into()]
            }
            Parameterization::Nace => ["a", "c", "e"]
                .iter()
                .flat_map(|b| (0..p).map(move |j| format!("{b}{j}")))
                .collect(),
            Parameterization::Falconer => ["v", "p"]
                .iter()
                .flat_map(|b| (0..p).map(move |j| format!("{b}{j}")))
                .collect(),
        }
    }

    /// Human-readable labels of the design row entries.
    pub fn design_labels(&self) -> Vec<String> {
        let mut out = vec!["1".to_string()];
        if self.parameterization == Parameterization::Falconer {
            out.push("z".into());
        }
        out.extend(self.terms.iter().map(|t| t.label()));
        if self.parameterization == Parameterization::Falconer {
            out.extend(self.terms.iter().map(|t| format!("{}*z", t.label())));
        }
        out
    }

    /// Fills `out` (length `design_len`) from a zygosity and the term values.
    pub fn design_row_from_terms(&self, z: Zygosity, term_values: &[f64], out: &mut [f64]) {
        let k = self.terms.len();
        out[0] = 1.0;
        match self.parameterization {
            Parameterization::Nace => out[1..1 + k].copy_from_slice(term_values),
            Parameterization::Falconer => {
                let zi = z.indicator();
                out[1] = zi;
                for (j, t) in term_values.iter().enumerate() {
                    out[2 + j] = *t;
                    out[2 + k + j] = t * zi;
                }
            }
        }
    }

    pub fn design_row(&self, z: Zygosity, covariates: &[f64], out: &mut [f64]) {
        let mut buf = [0.0; 16];
        let k = self.terms.len();
        if k <= buf.len() {
            for (b, t) in buf.iter_mut().zip(&self.terms) {
                *b = t.value(covariates);
            }
            self.design_row_from_terms(z, &buf[..k], out);
        } else {
            let vals: Vec<f64> = self.terms.iter().map(|t| t.value(covariates)).collect();
            self.design_row_from_terms(z, &vals, out);
        }
    }

    pub fn workspace(&self) -> PairMoments {
        PairMoments {
            gamma: [0.0; 3],
            jac: vec![[0.0; 3]; self.dim()],
            row: vec![0.0; self.design_len()],
        }
    }

    /// Evaluates Γ and D into `ws`. Returns false when any entry is non-finite.
    pub fn evaluate(
        &self,
        alpha: &[f64],
        z: Zygosity,
        covariates: &[f64],
        ws: &mut PairMoments,
    ) -> bool {
        debug_assert_eq!(alpha.len(), self.dim());
        let p = self.design_len();
        if ws.row.len() != p || ws.jac.len() != self.dim() {
            *ws = self.workspace();
        }
        self.design_row(z, covariates, &mut ws.row);
        let row = &ws.row;
        let dot = |block: &[f64]| -> f64 { block.iter().zip(row).map(|(a, x)| a * x).sum() };

        match self.parameterization {
            Parameterization::Nace => {
                let w = z.kinship();
                let link = self.var_link;
                let (ea, ec, ee) = (dot(&alpha[..p]), dot(&alpha[p..2 * p]), dot(&alpha[2 * p..]));
                let (sa, sc, se) = (link.inverse(ea), link.inverse(ec), link.inverse(ee));
                let (da, dc, de) = (
                    link.inverse_deriv(ea),
                    link.inverse_deriv(ec),
                    link.inverse_deriv(ee),
                );
                let total = sa + sc + se;
                ws.gamma = [total, total, w * sa + sc];
                for (j, &x) in row.iter().enumerate().take(p) {
                    ws.jac[j] = [da * x, da * x, w * da * x];
                    ws.jac[p + j] = [dc * x, dc * x, dc * x];
                    ws.jac[2 * p + j] = [de * x, de * x, 0.0];
                }
            }
            Parameterization::Falconer => {
                let (ev, ep) = (dot(&alpha[..p]), dot(&alpha[p..]));
                let s = self.var_link.inverse(ev);
                let r = self.corr_link.inverse(ep);
                let ds = self.var_link.inverse_deriv(ev);
                let dr = self.corr_link.inverse_deriv(ep);
                ws.gamma = [s, s, s * r];
                for (j, &x) in row.iter().enumerate().take(p) {
                    ws.jac[j] = [ds * x, ds * x, ds * x * r];
                    ws.jac[p + j] = [0.0, 0.0, s * dr * x];
                }
            }
        }
        ws.gamma.iter().all(|g| g.is_finite())
            && ws.jac.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn gamma_pop(&self, alpha: &[f64], z: Zygosity, covariates: &[f64]) -> Result<[f64; 3]> {
        self.check_dim(alpha)?;
        let mut ws = self.workspace();
        if !self.evaluate(alpha, z, covariates, &mut ws) {
            return Err(Error::Domain("non-finite population moments".into()));
        }
        Ok(ws.gamma)
    }

    /// Analytic Jacobian ∂Γ/∂αᵀ as a 3×q matrix.
    pub fn jacobian(&self, alpha: &[f64], z: Zygosity, covariates: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(alpha)?;
        let mut ws = self.workspace();
        if !self.evaluate(alpha, z, covariates, &mut ws) {
            return Err(Error::Domain("non-finite Jacobian".into()));
        }
        Ok(DMatrix::from_fn(3, self.dim(), |i, j| ws.jac[j][i]))
    }

    /// Working covariance Ω at the given parameters. A normal-form Ω that is
    /// not positive definite is reported as a domain error.
    pub fn working_cov(&self, alpha: &[f64], z: Zygosity, covariates: &[f64]) -> Result<Matrix3<f64>> {
        let gamma = self.gamma_pop(alpha, z, covariates)?;
        let omega = self.omega_from_gamma(&gamma);
        if self.working_cov == WorkingCov::Normal && omega.cholesky().is_none() {
            return Err(Error::Domain(format!(
                "normal working covariance is not positive definite (variance {}, covariance {})",
                gamma[0], gamma[2]
            )));
        }
        Ok(omega)
    }

    pub fn omega_from_gamma(&self, gamma: &[f64; 3]) -> Matrix3<f64> {
        let base = match self.working_cov {
            WorkingCov::Identity => Matrix3::identity(),
            WorkingCov::Normal => normal_working_cov(gamma[0], gamma[2]),
        };
        base * self.omega_scale
    }

    /// Ω⁻¹, or `None` when Ω is not positive definite.
    pub fn omega_inverse(&self, gamma: &[f64; 3]) -> Option<Matrix3<f64>> {
        match self.working_cov {
            WorkingCov::Identity => Some(Matrix3::identity() / self.omega_scale),
            WorkingCov::Normal => {
                let (t, c) = (gamma[0], gamma[2]);
                // PD iff |c| < t
                if !(t > 0.0 && c.abs() < t) {
                    return None;
                }
                let chol = (normal_working_cov(t, c) * self.omega_scale).cholesky()?;
                let inv = chol.inverse();
                inv.iter().all(|v| v.is_finite()).then_some(inv)
            }
        }
    }

    fn check_dim(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.dim() {
            return Err(Error::Usage(format!(
                "parameter vector has length {}, model expects {}",
                alpha.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Covariance of (y1², y2², y1·y2) for a centered bivariate normal with
/// common variance `t` and covariance `c`.
pub fn normal_working_cov(t: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(
        2.0 * t * t,
        2.0 * c * c,
        2.0 * t * c,
        2.0 * c * c,
        2.0 * t * t,
        2.0 * t * c,
        2.0 * t * c,
        2.0 * t * c,
        c * c + t * t,
    )
}

/// γ = (y1², y2², y1·y2) for a centered pair.
pub fn gamma_sample(pair: &TwinPair) -> [f64; 3] {
    [pair.y1 * pair.y1, pair.y2 * pair.y2, pair.y1 * pair.y2]
}

pub fn gamma_pop_nace(alpha: &AceParams, z: Zygosity) -> [f64; 3] {
    let t = alpha.total();
    [t, t, alpha.covariance(z)]
}

pub fn gamma_pop_falconer(params: &FalconerParams, z: Zygosity) -> Result<[f64; 3]> {
    let s = params.variance(z);
    let r = params.correlation(z);
    if !s.is_finite() || !r.is_finite() {
        return Err(Error::Domain("non-finite link inverse".into()));
    }
    if params.corr_link == CorrLink::Identity && r.abs() >= 1.0 {
        return Err(Error::Domain(format!(
            "correlation {r} for {z} lies outside (-1, 1) under the identity link"
        )));
    }
    Ok([s, s, s * r])
}

impl FalconerParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.v0, self.v1, self.p0, self.p1]
    }
}

impl AceParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.sigma2_a, self.sigma2_c, self.sigma2_e]
    }
}
