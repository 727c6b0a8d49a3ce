//! Modified Newton-Raphson (Fisher scoring) solver for the second-order
//! estimating equations Σ Dᵀ Ω⁻¹ (γ − Γ) = 0, with model-based and robust
//! sandwich covariance estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{TwinDataset, Zygosity};
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{gamma_sample, MomentModel, Parameterization, PairMoments};

/// Reciprocal-condition floor below which Σ DᵀΩ⁻¹D is treated as singular.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub tol: f64,
    pub step_halving_max: usize,
    /// Ridge added as `ridge · trace(A) · I` to A = Σ DᵀΩ⁻¹D.
    pub ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 100,
            tol: 1e-8,
            step_halving_max: 30,
            ridge: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub alpha_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute parameter change of the last accepted step.
    pub final_update_norm: f64,
    /// Same change relative to the largest parameter magnitude.
    pub final_relative_change: f64,
    /// ‖Σ DᵀΩ⁻¹f‖∞ at `alpha_hat`.
    pub score_norm: f64,
    /// Ψ = N⁻¹ Σ DᵀΩ⁻¹D at `alpha_hat`.
    pub psi: DMatrix<f64>,
    /// Σ DᵀΩ⁻¹ f fᵀ Ω⁻¹D at `alpha_hat`.
    pub meat: DMatrix<f64>,
    pub n_pairs: usize,
}

struct Accumulated {
    a: DMatrix<f64>,
    b: DVector<f64>,
    meat: DMatrix<f64>,
}

/// Sums A = Σ DᵀΩ⁻¹D, b = Σ DᵀΩ⁻¹f and the meat over pairs in data order.
/// `None` when Γ is non-finite or Ω is not positive definite for some pair.
fn accumulate(
    data: &TwinDataset,
    model: &MomentModel,
    alpha: &[f64],
    ws: &mut PairMoments,
) -> Option<Accumulated> {
    let q = model.dim();
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q];
    let mut meat = vec![0.0; q * q];
    let mut wd = vec![[0.0; 3]; q];
    let mut u = vec![0.0; q];

    for pair in &data.pairs {
        if !model.evaluate(alpha, pair.zygosity, &pair.covariates, ws) {
            return None;
        }
        let w = model.omega_inverse(&ws.gamma)?;
        let g = gamma_sample(pair);
        let f = [g[0] - ws.gamma[0], g[1] - ws.gamma[1], g[2] - ws.gamma[2]];
        for (j, col) in ws.jac.iter().enumerate() {
            for r in 0..3 {
                wd[j][r] = w[(r, 0)] * col[0] + w[(r, 1)] * col[1] + w[(r, 2)] * col[2];
            }
        }
        for i in 0..q {
            let di = &ws.jac[i];
            for j in i..q {
                let v = di[0] * wd[j][0] + di[1] * wd[j][1] + di[2] * wd[j][2];
                a[i * q + j] += v;
            }
            u[i] = wd[i][0] * f[0] + wd[i][1] * f[1] + wd[i][2] * f[2];
            b[i] += u[i];
        }
        for i in 0..q {
            for j in i..q {
                meat[i * q + j] += u[i] * u[j];
            }
        }
    }
    for i in 0..q {
        for j in 0..i {
            a[i * q + j] = a[j * q + i];
            meat[i * q + j] = meat[j * q + i];
        }
    }
    let acc = Accumulated {
        a: DMatrix::from_row_slice(q, q, &a),
        b: DVector::from_vec(b),
        meat: DMatrix::from_row_slice(q, q, &meat),
    };
    acc.b.iter().all(|v| v.is_finite()).then_some(acc)
}

fn newton_direction(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let q = a.nrows();
    let mut a = a.clone();
    if ridge > 0.0 {
        let bump = ridge * a.trace() / q as f64;
        for i in 0..q {
            a[(i, i)] += bump;
        }
    }
    let cond = linalg::equilibrated_condition(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(format!(
            "sum of D'W D is singular (condition estimate {cond:.3e})"
        )));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("Cholesky failed (condition estimate {cond:.3e})")))?;
    Ok(chol.solve(b))
}

/// Iterates α ← α + (Σ DᵀΩ⁻¹D)⁻¹ Σ DᵀΩ⁻¹f, recomputing D, Ω and f at every
/// iterate, halving the step whenever the candidate leaves the region where Γ
/// is finite and Ω positive definite. Non-convergence is reported through
/// `converged = false`, not as an error.
pub fn solve(
    data: &TwinDataset,
    model: &MomentModel,
    alpha0: &[f64],
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no twin pairs".into()));
    }
    if model.parameterization == Parameterization::Falconer {
        data.require_both_groups()?;
    }
    if alpha0.len() != model.dim() {
        return Err(Error::Usage(format!(
            "starting vector has length {}, model expects {}",
            alpha0.len(),
            model.dim()
        )));
    }

    let mut ws = model.workspace();
    let mut alpha = alpha0.to_vec();
    let mut acc = accumulate(data, model, &alpha, &mut ws).ok_or_else(|| {
        Error::Domain("starting values give non-finite moments or an invalid working covariance".into())
    })?;

    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut last_rel = f64::INFINITY;

    while iterations < config.max_iter {
        iterations += 1;
        let delta = newton_direction(&acc.a, &acc.b, config.ridge)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.step_halving_max {
            let cand: Vec<f64> = alpha.iter().zip(delta.iter()).map(|(a, d)| a + step * d).collect();
            if let Some(next) = accumulate(data, model, &cand, &mut ws) {
                accepted = Some((cand, next));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, next)) = accepted else {
            break;
        };
        last_change = alpha
            .iter()
            .zip(&cand)
            .map(|(a, c)| (c - a).abs())
            .fold(0.0, f64::max);
        let scale = cand.iter().map(|v| v.abs()).fold(0.0, f64::max);
        last_rel = if scale > 0.0 { last_change / scale } else { last_change };
        alpha = cand;
        acc = next;
        if last_change <= config.tol {
            converged = true;
            break;
        }
    }

    let n = data.len() as f64;
    Ok(SolveOutcome {
        score_norm: acc.b.amax(),
        psi: linalg::symmetrize(&(acc.a / n)),
        meat: linalg::symmetrize(&acc.meat),
        alpha_hat: alpha,
        iterations,
        converged,
        final_update_norm: last_change,
        final_relative_change: last_rel,
        n_pairs: data.len(),
    })
}

fn psi_inverse(outcome: &SolveOutcome) -> Result<DMatrix<f64>> {
    let cond = linalg::equilibrated_condition(&outcome.psi);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(format!("Psi is singular (condition estimate {cond:.3e})")));
    }
    linalg::spd_inverse(&outcome.psi)
        .ok_or_else(|| Error::Singular("Psi is not positive definite".into()))
}

/// Robust covariance N⁻² Ψ⁻¹ (meat) Ψ⁻¹.
pub fn sandwich_cov(outcome: &SolveOutcome, n_pairs: usize) -> Result<DMatrix<f64>> {
    let inv = psi_inverse(outcome)?;
    let n = n_pairs as f64;
    Ok(linalg::symmetrize(&(&inv * &outcome.meat * &inv / (n * n))))
}

/// Model-based covariance N⁻¹ Ψ⁻¹.
pub fn model_based_cov(outcome: &SolveOutcome, n_pairs: usize) -> Result<DMatrix<f64>> {
    Ok(psi_inverse(outcome)? / n_pairs as f64)
}

/// Default starting values.
///
/// NACE: every component intercept at one third of the pooled second moment,
/// covariate slopes zero. Falconer: the per-zygosity pooled-moment solution
/// mapped through the links, covariate slopes zero.
pub fn initial_alpha(data: &TwinDataset, model: &MomentModel) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InsufficientData("no twin pairs".into()));
    }
    let p = model.design_len();
    let mut alpha = vec![0.0; model.dim()];
    match model.parameterization {
        Parameterization::Nace => {
            let m2 = data.pairs.iter().map(|p| p.y1 * p.y1 + p.y2 * p.y2).sum::<f64>()
                / (2 * data.len()) as f64;
            if !(m2 > 0.0) {
                return Err(Error::Degenerate("trait has zero variance".into()));
            }
            let start = model.var_link.link(m2 / 3.0);
            for block in 0..3 {
                alpha[block * p] = start;
            }
        }
        Parameterization::Falconer => {
            data.require_both_groups()?;
            let dz = pooled_moments(data, Zygosity::Dz);
            let mz = pooled_moments(data, Zygosity::Mz);
            for (s, _) in [dz, mz] {
                if !(s > 0.0) {
                    return Err(Error::Degenerate("a zygosity group has zero variance".into()));
                }
            }
            let rho = |(s, c): (f64, f64)| (c / s).clamp(-0.999, 0.999);
            let (vl, cl) = (model.var_link, model.corr_link);
            alpha[0] = vl.link(dz.0);
            alpha[1] = vl.link(mz.0) - vl.link(dz.0);
            alpha[p] = cl.link(rho(dz));
            alpha[p + 1] = cl.link(rho(mz)) - cl.link(rho(dz));
        }
    }
    Ok(alpha)
}

/// (σ̂², ĉov) = ((Σy1² + Σy2²)/(2n), Σy1y2/n) for one zygosity group.
pub fn pooled_moments(data: &TwinDataset, z: Zygosity) -> (f64, f64) {
    let mut n = 0usize;
    let (mut ss, mut cp) = (0.0, 0.0);
    for p in data.pairs.iter().filter(|p| p.zygosity == z) {
        n += 1;
        ss += p.y1 * p.y1 + p.y2 * p.y2;
        cp += p.y1 * p.y2;
    }
    let n = n as f64;
    (ss / (2.0 * n), cp / n)
}
