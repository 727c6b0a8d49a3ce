//! Univariate Lagrangian (generalized) Poisson distribution.
//!
//! P(Y = y) = θ (θ + λy)^(y−1) e^(−θ−λy) / y!, θ > 0, 0 ≤ λ < 1, with mean
//! θ/(1−λ) and variance θ/(1−λ)³.

use rand::Rng;

use crate::error::{Error, Result};

/// Cumulative probability at which the sampling table is truncated; the
/// remaining mass is lumped into the last support point.
pub const TAIL_CAP: f64 = 1.0 - 1e-12;

/// Hard limit on the table length before sampling gives up.
const MAX_SUPPORT: usize = 10_000_000;

fn check(theta: f64, lambda: f64) -> Result<()> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Config(format!("LGP rate must be positive, got {theta}")));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Config(format!("LGP dispersion must lie in [0, 1), got {lambda}")));
    }
    Ok(())
}

/// log P(Y = y), evaluated entirely in log space.
pub fn lgp_ln_pmf(theta: f64, lambda: f64, y: u64) -> f64 {
    let yf = y as f64;
    let ln_fact: f64 = (2..=y).map(|k| (k as f64).ln()).sum();
    theta.ln() + (yf - 1.0) * (theta + lambda * yf).ln() - theta - lambda * yf - ln_fact
}

pub fn lgp_pmf(theta: f64, lambda: f64, y: u64) -> f64 {
    lgp_ln_pmf(theta, lambda, y).exp()
}

pub fn lgp_mean(theta: f64, lambda: f64) -> f64 {
    theta / (1.0 - lambda)
}

pub fn lgp_variance(theta: f64, lambda: f64) -> f64 {
    theta / (1.0 - lambda).powi(3)
}

/// Inverse-CDF sampler over a precomputed cumulative table.
#[derive(Debug, Clone)]
pub struct LgpSampler {
    theta: f64,
    lambda: f64,
    cdf: Vec<f64>,
}

impl LgpSampler {
    pub fn new(theta: f64, lambda: f64) -> Result<Self> {
        check(theta, lambda)?;
        let mut cdf = Vec::new();
        let mut cum = 0.0;
        let mut ln_fact = 0.0;
        let ln_theta = theta.ln();
        let mut y = 0u64;
        loop {
            if y > 1 {
                ln_fact += (y as f64).ln();
            }
            let yf = y as f64;
            let ln_p = ln_theta + (yf - 1.0) * (theta + lambda * yf).ln() - theta - lambda * yf - ln_fact;
            cum += ln_p.exp();
            cdf.push(cum);
            if cum >= TAIL_CAP {
                break;
            }
            if cdf.len() >= MAX_SUPPORT {
                return Err(Error::Sampling(format!(
                    "LGP({theta}, {lambda}) cumulative mass {cum} below cap after {MAX_SUPPORT} support points"
                )));
            }
            y += 1;
        }
        Ok(LgpSampler { theta, lambda, cdf })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn support_len(&self) -> usize {
        self.cdf.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c < u);
        idx.min(self.cdf.len() - 1) as u64
    }
}

/// One draw; builds the table on every call, so prefer [`LgpSampler`] in loops.
pub fn lgp_sample<R: Rng + ?Sized>(theta: f64, lambda: f64, rng: &mut R) -> Result<u64> {
    Ok(LgpSampler::new(theta, lambda)?.sample(rng))
}
