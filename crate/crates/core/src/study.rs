//! Monte Carlo coverage studies.
//!
//! A study draws `replicates` datasets from one scenario, fits every
//! configured estimator to each, and aggregates point estimates, empirical
//! and estimated standard errors and 95% interval coverage. Replicate `r`
//! always uses the RNG stream derived from `(seed, r)`, and aggregation runs
//! in replicate order, so summaries do not depend on the thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{center, CenterMode, TwinDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    fit, fit_with_variance_covariates, AceProportions, CovariateFit, CovariateSpec, Estimator, FitOptions,
    ProportionInference, Quantity,
};
use crate::simulate::{replicate_rng, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEstimator {
    pub estimator: Estimator,
    /// Fit h² as a function of this covariate (GEE2 estimators only).
    #[serde(default)]
    pub covariate: Option<CovariateSpec>,
    /// Covariate values to report; defaults to the scenario's levels.
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
}

impl StudyEstimator {
    pub fn plain(estimator: Estimator) -> Self {
        StudyEstimator {
            estimator,
            covariate: None,
            levels: None,
        }
    }

    pub fn with_covariate(estimator: Estimator, covariate: CovariateSpec) -> Self {
        StudyEstimator {
            estimator,
            covariate: Some(covariate),
            levels: None,
        }
    }

    fn label(&self) -> String {
        match &self.covariate {
            Some(c) => format!("{} ({})", self.estimator.name(), c.name()),
            None => self.estimator.name().to_string(),
        }
    }
}

/// Per-replicate Wald test of a quantity compared between two covariate levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    /// Index into the study's estimator list; must be a covariate fit.
    pub estimator: usize,
    #[serde(default = "default_quantity")]
    pub quantity: Quantity,
    /// Covariate values compared as `a − b`.
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_alpha_level")]
    pub level: f64,
}

fn default_quantity() -> Quantity {
    Quantity::H2
}

fn default_alpha_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyOutputs {
    #[serde(default)]
    pub summary_md: Option<PathBuf>,
    #[serde(default)]
    pub summary_csv: Option<PathBuf>,
    #[serde(default)]
    pub replicates_csv: Option<PathBuf>,
    #[serde(default)]
    pub profile_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    pub estimators: Vec<StudyEstimator>,
    pub replicates: usize,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub parallelism: usize,
    /// Overrides the scenario's pooled truth for estimators without a covariate.
    #[serde(default)]
    pub truth: Option<AceProportions>,
    /// Centering applied to every replicate before fitting; `null` disables it.
    #[serde(default = "default_center")]
    pub center: Option<CenterMode>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub contrast: Option<ContrastSpec>,
    #[serde(default)]
    pub outputs: StudyOutputs,
}

fn default_center() -> Option<CenterMode> {
    Some(CenterMode::PerZygosity)
}

impl StudyConfig {
    pub fn new(scenario: ScenarioConfig, estimators: Vec<StudyEstimator>, replicates: usize) -> Self {
        StudyConfig {
            scenario,
            estimators,
            replicates,
            parallelism: 0,
            truth: None,
            center: default_center(),
            fit: FitOptions::default(),
            contrast: None,
            outputs: StudyOutputs::default(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators configured".into()));
        }
        self.scenario.scenario.validate()?;
        if let Some(t) = &self.truth {
            if ![t.h2, t.c2, t.e2].iter().all(|v| v.is_finite()) || (t.h2 + t.c2 + t.e2 - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "truth proportions must be finite and sum to 1, got ({}, {}, {})",
                    t.h2, t.c2, t.e2
                )));
            }
        }
        for e in &self.estimators {
            if let Some(c) = &e.covariate {
                if !matches!(e.estimator, Estimator::Gee2Nace | Estimator::Gee2Falconer) {
                    return Err(Error::Config(format!(
                        "{} cannot fit covariate-dependent variances",
                        e.estimator
                    )));
                }
                match self.scenario.scenario.covariate() {
                    Some(name) if name == c.name() => {}
                    Some(name) => {
                        return Err(Error::Config(format!(
                            "scenario {} carries covariate '{name}', not '{}'",
                            self.scenario.scenario.name(),
                            c.name()
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "scenario {} has no covariate for {}",
                            self.scenario.scenario.name(),
                            e.label()
                        )))
                    }
                }
            }
        }
        if let Some(c) = &self.contrast {
            let e = self
                .estimators
                .get(c.estimator)
                .ok_or_else(|| Error::Config(format!("contrast refers to estimator {} of {}", c.estimator, self.estimators.len())))?;
            if e.covariate.is_none() {
                return Err(Error::Config(format!("contrast estimator {} has no covariate", e.label())));
            }
            let levels = self.levels_for(e);
            for v in [c.a, c.b] {
                if !levels.contains(&v) {
                    return Err(Error::Config(format!("contrast level {v} is not among the reported levels {levels:?}")));
                }
            }
            if !(c.level > 0.0 && c.level < 1.0) {
                return Err(Error::Config(format!("test level must lie in (0, 1), got {}", c.level)));
            }
        }
        Ok(())
    }

    fn levels_for(&self, e: &StudyEstimator) -> Vec<f64> {
        e.levels.clone().unwrap_or_else(|| self.scenario.scenario.levels())
    }

    fn truth_for(&self, level: Option<f64>) -> AceProportions {
        match (level, &self.truth) {
            (None, Some(t)) => *t,
            _ => self.scenario.scenario.truth(level),
        }
    }
}

/// One estimator on one replicate at one covariate level (or overall).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    pub level: Option<f64>,
    pub ok: bool,
    pub h2: f64,
    pub c2: f64,
    pub e2: f64,
    pub se_h2: f64,
    pub se_c2: f64,
    pub se_e2: f64,
    pub ci_h2: [f64; 2],
    pub ci_c2: [f64; 2],
    pub ci_e2: [f64; 2],
    pub covers_h2: bool,
    pub covers_c2: bool,
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn failed(replicate: usize, estimator: String, level: Option<f64>, error: String) -> Self {
        let nan = f64::NAN;
        ReplicateRecord {
            replicate,
            estimator,
            level,
            ok: false,
            h2: nan,
            c2: nan,
            e2: nan,
            se_h2: nan,
            se_c2: nan,
            se_e2: nan,
            ci_h2: [nan; 2],
            ci_c2: [nan; 2],
            ci_e2: [nan; 2],
            covers_h2: false,
            covers_c2: false,
            error: Some(error),
        }
    }

    fn from_inference(
        replicate: usize,
        estimator: String,
        level: Option<f64>,
        converged: bool,
        inf: &ProportionInference,
        truth: &AceProportions,
    ) -> Self {
        let p = inf.proportions;
        let finite = [p.h2, p.c2, inf.se_h2, inf.se_c2].iter().all(|v| v.is_finite());
        let ok = converged && finite;
        let error = if !converged {
            Some("did not converge".into())
        } else if !finite {
            Some("non-finite estimate or standard error".into())
        } else {
            None
        };
        ReplicateRecord {
            replicate,
            estimator,
            level,
            ok,
            h2: p.h2,
            c2: p.c2,
            e2: p.e2,
            se_h2: inf.se_h2,
            se_c2: inf.se_c2,
            se_e2: inf.se_e2,
            ci_h2: inf.ci_h2,
            ci_c2: inf.ci_c2,
            ci_e2: inf.ci_e2,
            covers_h2: ok && inf.ci_h2[0] <= truth.h2 && truth.h2 <= inf.ci_h2[1],
            covers_c2: ok && inf.ci_c2[0] <= truth.c2 && truth.c2 <= inf.ci_c2[1],
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRecord {
    pub replicate: usize,
    pub ok: bool,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Aggregate over the successful replicates of one estimator at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub level: Option<f64>,
    pub truth_h2: f64,
    pub truth_c2: f64,
    pub mean_h2: f64,
    pub mean_c2: f64,
    /// Standard deviation of the estimates; `None` with fewer than two fits.
    pub true_se_h2: Option<f64>,
    pub true_se_c2: Option<f64>,
    pub mean_se_h2: f64,
    pub mean_se_c2: f64,
    pub coverage_h2: f64,
    pub coverage_c2: f64,
    /// Standard error of the mean estimate (true SE / √fits).
    pub sem_h2: Option<f64>,
    pub sem_c2: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub estimator: String,
    pub quantity: Quantity,
    pub a: f64,
    pub b: f64,
    pub level: f64,
    pub rejection_rate: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Mean point estimate and mean interval per covariate level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub estimator: String,
    pub level: f64,
    pub h2: f64,
    pub ci_h2: [f64; 2],
    pub c2: f64,
    pub ci_c2: [f64; 2],
    pub e2: f64,
    pub ci_e2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub scenario: String,
    pub seed: u64,
    pub replicates: usize,
    pub rows: Vec<SummaryRow>,
    pub contrast: Option<ContrastSummary>,
    pub notes: Vec<String>,
}

impl StudySummary {
    pub fn row(&self, estimator: &str, level: Option<f64>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.level == level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub summary: StudySummary,
    pub records: Vec<ReplicateRecord>,
    pub contrasts: Vec<ContrastRecord>,
    pub profile: Vec<ProfileRow>,
}

struct ReplicateOutput {
    records: Vec<ReplicateRecord>,
    contrast: Option<ContrastRecord>,
}

fn run_replicate(config: &StudyConfig, r: usize) -> ReplicateOutput {
    let mut rng = replicate_rng(config.scenario.seed, r as u64);
    let data = config
        .scenario
        .scenario
        .generate(&mut rng)
        .and_then(|d| match config.center {
            Some(mode) => center(&d, mode),
            None => Ok(d),
        });
    let mut records = Vec::new();
    let mut contrast = None;
    for (k, est) in config.estimators.iter().enumerate() {
        let label = est.label();
        match &est.covariate {
            None => {
                let truth = config.truth_for(None);
                records.push(match data.as_ref() {
                    Ok(d) => match fit(d, est.estimator, &config.fit) {
                        Ok(f) => {
                            ReplicateRecord::from_inference(r, label, None, f.diagnostics.converged, &f.inference, &truth)
                        }
                        Err(e) => ReplicateRecord::failed(r, label, None, e.to_string()),
                    },
                    Err(e) => ReplicateRecord::failed(r, label, None, e.to_string()),
                });
            }
            Some(spec) => {
                let levels = config.levels_for(est);
                let result = data
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|d| covariate_fit(d, est.estimator, spec, &levels, &config.fit).map_err(|e| e.to_string()));
                match &result {
                    Ok(f) => {
                        for l in &f.levels {
                            let truth = config.truth_for(Some(l.value));
                            records.push(ReplicateRecord::from_inference(
                                r,
                                label.clone(),
                                Some(l.value),
                                f.diagnostics.converged,
                                &l.inference,
                                &truth,
                            ));
                        }
                    }
                    Err(msg) => {
                        for &v in &levels {
                            records.push(ReplicateRecord::failed(r, label.clone(), Some(v), msg.clone()));
                        }
                    }
                }
                if let Some(c) = config.contrast.as_ref().filter(|c| c.estimator == k) {
                    contrast = Some(contrast_record(r, c, result.as_ref().ok()));
                }
            }
        }
    }
    ReplicateOutput { records, contrast }
}

fn covariate_fit(
    data: &TwinDataset,
    estimator: Estimator,
    spec: &CovariateSpec,
    levels: &[f64],
    opts: &FitOptions,
) -> Result<CovariateFit> {
    fit_with_variance_covariates(data, estimator, spec, Some(levels), opts)
}

fn contrast_record(r: usize, c: &ContrastSpec, fit: Option<&CovariateFit>) -> ContrastRecord {
    let test = fit.filter(|f| f.diagnostics.converged).and_then(|f| {
        let ia = f.levels.iter().position(|l| l.value == c.a)?;
        let ib = f.levels.iter().position(|l| l.value == c.b)?;
        f.contrast(ia, ib, c.quantity).ok()
    });
    match test {
        Some(t) if t.p_value.is_finite() => ContrastRecord {
            replicate: r,
            ok: true,
            estimate: t.estimate,
            se: t.se,
            p_value: t.p_value,
            reject: t.p_value < c.level,
        },
        _ => ContrastRecord {
            replicate: r,
            ok: false,
            estimate: f64::NAN,
            se: f64::NAN,
            p_value: f64::NAN,
            reject: false,
        },
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

fn frac(flags: impl Iterator<Item = bool>, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    flags.filter(|&b| b).count() as f64 / n as f64
}

fn summarize_group(config: &StudyConfig, estimator: String, level: Option<f64>, recs: &[&ReplicateRecord]) -> SummaryRow {
    let ok: Vec<&&ReplicateRecord> = recs.iter().filter(|r| r.ok).collect();
    let n = ok.len();
    let pick = |f: fn(&ReplicateRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let h2 = pick(|r| r.h2);
    let c2 = pick(|r| r.c2);
    let true_se_h2 = sd(&h2);
    let true_se_c2 = sd(&c2);
    let truth = config.truth_for(level);
    SummaryRow {
        estimator,
        level,
        truth_h2: truth.h2,
        truth_c2: truth.c2,
        mean_h2: mean(&h2),
        mean_c2: mean(&c2),
        true_se_h2,
        true_se_c2,
        mean_se_h2: mean(&pick(|r| r.se_h2)),
        mean_se_c2: mean(&pick(|r| r.se_c2)),
        coverage_h2: frac(ok.iter().map(|r| r.covers_h2), n),
        coverage_c2: frac(ok.iter().map(|r| r.covers_c2), n),
        sem_h2: true_se_h2.map(|s| s / (n as f64).sqrt()),
        sem_c2: true_se_c2.map(|s| s / (n as f64).sqrt()),
        n_ok: n,
        n_failed: recs.len() - n,
    }
}

fn profile_row(estimator: String, level: f64, recs: &[&ReplicateRecord]) -> ProfileRow {
    let ok: Vec<&&ReplicateRecord> = recs.iter().filter(|r| r.ok).collect();
    let m = |f: &dyn Fn(&ReplicateRecord) -> f64| mean(&ok.iter().map(|r| f(r)).collect::<Vec<f64>>());
    ProfileRow {
        estimator,
        level,
        h2: m(&|r| r.h2),
        ci_h2: [m(&|r| r.ci_h2[0]), m(&|r| r.ci_h2[1])],
        c2: m(&|r| r.c2),
        ci_c2: [m(&|r| r.ci_c2[0]), m(&|r| r.ci_c2[1])],
        e2: m(&|r| r.e2),
        ci_e2: [m(&|r| r.ci_e2[0]), m(&|r| r.ci_e2[1])],
    }
}

/// Runs the study and aggregates it; per-replicate failures are counted, not fatal.
pub fn run_study(config: &StudyConfig) -> Result<StudyRun> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outputs: Vec<ReplicateOutput> =
        pool.install(|| (0..config.replicates).into_par_iter().map(|r| run_replicate(config, r)).collect());

    let mut records = Vec::new();
    let mut contrasts = Vec::new();
    for out in outputs {
        records.extend(out.records);
        contrasts.extend(out.contrast);
    }

    let mut rows = Vec::new();
    let mut profile = Vec::new();
    for est in &config.estimators {
        let label = est.label();
        let levels: Vec<Option<f64>> = match est.covariate {
            Some(_) => config.levels_for(est).into_iter().map(Some).collect(),
            None => vec![None],
        };
        for level in levels {
            let group: Vec<&ReplicateRecord> =
                records.iter().filter(|r| r.estimator == label && r.level == level).collect();
            rows.push(summarize_group(config, label.clone(), level, &group));
            if let Some(v) = level {
                profile.push(profile_row(label.clone(), v, &group));
            }
        }
    }

    let contrast = config.contrast.as_ref().map(|c| {
        let n_ok = contrasts.iter().filter(|r| r.ok).count();
        ContrastSummary {
            estimator: config.estimators[c.estimator].label(),
            quantity: c.quantity,
            a: c.a,
            b: c.b,
            level: c.level,
            rejection_rate: frac(contrasts.iter().filter(|r| r.ok).map(|r| r.reject), n_ok),
            n_ok,
            n_failed: contrasts.len() - n_ok,
        }
    });

    let mut notes = Vec::new();
    match config.center {
        Some(CenterMode::PerZygosity) => notes.push("trait values centered within zygosity group before fitting".into()),
        Some(CenterMode::Global) => notes.push("trait values centered on the overall mean before fitting".into()),
        None => notes.push("no centering applied before fitting".into()),
    }
    let failed: usize = rows.iter().map(|r| r.n_failed).sum();
    if failed > 0 {
        notes.push(format!("{failed} fit(s) failed or did not converge and were excluded"));
    }

    Ok(StudyRun {
        summary: StudySummary {
            scenario: config.scenario.scenario.name().into(),
            seed: config.scenario.seed,
            replicates: config.replicates,
            rows,
            contrast,
            notes,
        },
        records,
        contrasts,
        profile,
    })
}

/// `%.6g`-style formatting so output files are byte-stable.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{}{:02}", trim_zeros(mant), if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g6).unwrap_or_else(|| "NA".into())
}

fn level_str(level: Option<f64>) -> String {
    level.map(fmt_g6).unwrap_or_default()
}

const SUMMARY_COLUMNS: [&str; 16] = [
    "estimator",
    "level",
    "truth_h2",
    "truth_c2",
    "mean_h2",
    "mean_c2",
    "true_se_h2",
    "true_se_c2",
    "mean_se_h2",
    "mean_se_c2",
    "coverage_h2",
    "coverage_c2",
    "sem_h2",
    "sem_c2",
    "n_ok",
    "n_failed",
];

fn summary_fields(r: &SummaryRow) -> Vec<String> {
    vec![
        r.estimator.clone(),
        level_str(r.level),
        fmt_g6(r.truth_h2),
        fmt_g6(r.truth_c2),
        fmt_g6(r.mean_h2),
        fmt_g6(r.mean_c2),
        opt(r.true_se_h2),
        opt(r.true_se_c2),
        fmt_g6(r.mean_se_h2),
        fmt_g6(r.mean_se_c2),
        fmt_g6(r.coverage_h2),
        fmt_g6(r.coverage_c2),
        opt(r.sem_h2),
        opt(r.sem_c2),
        r.n_ok.to_string(),
        r.n_failed.to_string(),
    ]
}

pub fn write_summary_csv<W: Write>(summary: &StudySummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &summary.rows {
        w.write_record(summary_fields(r))?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}

pub fn write_summary_markdown<W: Write>(summary: &StudySummary, mut w: W) -> Result<()> {
    let io = |e| Error::io("<summary markdown>", e);
    writeln!(
        w,
        "Scenario `{}`, seed {}, {} replicates.\n",
        summary.scenario, summary.seed, summary.replicates
    )
    .map_err(io)?;
    writeln!(
        w,
        "| Estimator | Level | h² (true SE, mean SE) | coverage h² | c² (true SE, mean SE) | coverage c² | SEM (h², c²) | fits | failed |"
    )
    .map_err(io)?;
    writeln!(w, "|---|---|---|---|---|---|---|---|---|").map_err(io)?;
    for r in &summary.rows {
        writeln!(
            w,
            "| {} | {} | {} ({}, {}) | {} | {} ({}, {}) | {} | ({}, {}) | {} | {} |",
            r.estimator,
            level_str(r.level),
            fmt_g6(r.mean_h2),
            opt(r.true_se_h2),
            fmt_g6(r.mean_se_h2),
            fmt_g6(r.coverage_h2),
            fmt_g6(r.mean_c2),
            opt(r.true_se_c2),
            fmt_g6(r.mean_se_c2),
            fmt_g6(r.coverage_c2),
            opt(r.sem_h2),
            opt(r.sem_c2),
            r.n_ok,
            r.n_failed
        )
        .map_err(io)?;
    }
    if let Some(c) = &summary.contrast {
        writeln!(
            w,
            "\nWald contrast {:?} at {} minus {} ({}): rejection rate {} at level {} over {} fits ({} failed).",
            c.quantity,
            fmt_g6(c.a),
            fmt_g6(c.b),
            c.estimator,
            fmt_g6(c.rejection_rate),
            fmt_g6(c.level),
            c.n_ok,
            c.n_failed
        )
        .map_err(io)?;
    }
    if !summary.notes.is_empty() {
        writeln!(w).map_err(io)?;
        for n in &summary.notes {
            writeln!(w, "- {n}").map_err(io)?;
        }
    }
    Ok(())
}

pub fn write_replicates_csv<W: Write>(records: &[ReplicateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "replicate", "estimator", "level", "ok", "h2", "c2", "e2", "se_h2", "se_c2", "se_e2", "covers_h2", "covers_c2",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.estimator.clone(),
            level_str(r.level),
            r.ok.to_string(),
            fmt_g6(r.h2),
            fmt_g6(r.c2),
            fmt_g6(r.e2),
            fmt_g6(r.se_h2),
            fmt_g6(r.se_c2),
            fmt_g6(r.se_e2),
            r.covers_h2.to_string(),
            r.covers_c2.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<replicates csv>", e))?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "estimator", "level", "h2", "h2_lower", "h2_upper", "c2", "c2_lower", "c2_upper", "e2", "e2_lower", "e2_upper",
    ])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            fmt_g6(r.level),
            fmt_g6(r.h2),
            fmt_g6(r.ci_h2[0]),
            fmt_g6(r.ci_h2[1]),
            fmt_g6(r.c2),
            fmt_g6(r.ci_c2[0]),
            fmt_g6(r.ci_c2[1]),
            fmt_g6(r.e2),
            fmt_g6(r.ci_e2[0]),
            fmt_g6(r.ci_e2[1]),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<profile csv>", e))?;
    Ok(())
}

/// Profile rows for a single covariate fit.
pub fn fit_profile(fit: &CovariateFit) -> Vec<ProfileRow> {
    fit.levels
        .iter()
        .map(|l| {
            let i = &l.inference;
            ProfileRow {
                estimator: fit.estimator.name().into(),
                level: l.value,
                h2: i.proportions.h2,
                ci_h2: i.ci_h2,
                c2: i.proportions.c2,
                ci_c2: i.ci_c2,
                e2: i.proportions.e2,
                ci_e2: i.ci_e2,
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes whichever outputs are configured.
pub fn write_outputs(run: &StudyRun, outputs: &StudyOutputs) -> Result<()> {
    if let Some(p) = &outputs.summary_md {
        write_summary_markdown(&run.summary, create(p)?)?;
    }
    if let Some(p) = &outputs.summary_csv {
        write_summary_csv(&run.summary, create(p)?)?;
    }
    if let Some(p) = &outputs.replicates_csv {
        write_replicates_csv(&run.records, create(p)?)?;
    }
    if let Some(p) = &outputs.profile_csv {
        write_profile_csv(&run.profile, create(p)?)?;
    }
    Ok(())
}

/// Ready-made studies mirroring the standard simulation scenarios.
pub mod presets {
    use super::*;

    fn all_plain() -> Vec<StudyEstimator> {
        Estimator::ALL.iter().map(|&e| StudyEstimator::plain(e)).collect()
    }

    pub fn heavy_tailed(replicates: usize, seed: u64) -> StudyConfig {
        StudyConfig::new(ScenarioConfig::new(Scenario::mvt_default(), seed), all_plain(), replicates)
    }

    pub fn overdispersed_counts(replicates: usize, seed: u64) -> StudyConfig {
        StudyConfig::new(ScenarioConfig::new(Scenario::blgp_default(), seed), all_plain(), replicates)
    }

    pub fn unequal_variance(replicates: usize, seed: u64) -> StudyConfig {
        StudyConfig::new(ScenarioConfig::new(Scenario::unequal_var_default(), seed), all_plain(), replicates)
    }

    pub fn sex_varying(replicates: usize, seed: u64) -> StudyConfig {
        let sex = CovariateSpec::linear("sex");
        StudyConfig::new(
            ScenarioConfig::new(Scenario::sex_default(), seed),
            vec![
                StudyEstimator::with_covariate(Estimator::Gee2Nace, sex.clone()),
                StudyEstimator::with_covariate(Estimator::Gee2Falconer, sex),
            ],
            replicates,
        )
    }

    /// Constant-h² age scenario with a Wald test of h² at the oldest versus
    /// youngest age.
    pub fn age_contrast(replicates: usize, seed: u64) -> StudyConfig {
        let scenario = Scenario::age_default();
        let levels = scenario.levels();
        let (lo, hi) = (levels[0], levels[levels.len() - 1]);
        let mut cfg = StudyConfig::new(
            ScenarioConfig::new(scenario, seed),
            vec![StudyEstimator::with_covariate(Estimator::Gee2Falconer, CovariateSpec::quadratic("age"))],
            replicates,
        );
        cfg.contrast = Some(ContrastSpec {
            estimator: 0,
            quantity: Quantity::H2,
            a: hi,
            b: lo,
            level: 0.05,
        });
        cfg
    }

    pub fn by_name(name: &str, replicates: usize, seed: u64) -> Result<StudyConfig> {
        Ok(match name {
            "mvt" => heavy_tailed(replicates, seed),
            "blgp" => overdispersed_counts(replicates, seed),
            "unequal-var" | "unequal_var" => unequal_variance(replicates, seed),
            "sex" => sex_varying(replicates, seed),
            "age" => age_contrast(replicates, seed),
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset '{other}' (expected mvt, blgp, unequal-var, sex or age)"
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.5), "0.5");
        assert_eq!(fmt_g6(0.123456789), "0.123457");
        assert_eq!(fmt_g6(123456.7), "123457");
        assert_eq!(fmt_g6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g6(0.00001234), "1.234e-05");
        assert_eq!(fmt_g6(-2.0), "-2");
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(9.9999999), "10");
        assert_eq!(fmt_g6(f64::NAN), "NA");
    }

    #[test]
    fn single_replicate_has_no_true_se() {
        let run = run_study(&presets::heavy_tailed(1, 3)).unwrap();
        assert_eq!(run.records.len(), 4);
        for (row, rec) in run.summary.rows.iter().zip(&run.records) {
            assert_eq!(row.true_se_h2, None);
            assert_eq!(row.sem_h2, None);
            assert_eq!(row.mean_h2, rec.h2);
            assert_eq!(row.mean_se_c2, rec.se_c2);
        }
    }

    #[test]
    fn config_rejections() {
        let mut cfg = presets::heavy_tailed(0, 1);
        assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
        cfg.replicates = 2;
        cfg.estimators = vec![StudyEstimator::with_covariate(Estimator::Gee2Nace, CovariateSpec::linear("sex"))];
        assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
        let mut sex = presets::sex_varying(2, 1);
        sex.estimators[0].estimator = Estimator::Nace;
        assert!(sex.validate().is_err());
    }

    #[test]
    fn coverage_flags_follow_intervals() {
        let run = run_study(&presets::overdispersed_counts(5, 11)).unwrap();
        let t = AceProportions::new(0.5, 0.3);
        for r in run.records.iter().filter(|r| r.ok) {
            assert_eq!(r.covers_h2, r.h2 - 1.96 * r.se_h2 <= t.h2 && t.h2 <= r.h2 + 1.96 * r.se_h2);
            assert_eq!(r.covers_c2, r.ci_c2[0] <= t.c2 && t.c2 <= r.ci_c2[1]);
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = presets::age_contrast(10, 5);
        let s = serde_json::to_string_pretty(&cfg).unwrap();
        let back: StudyConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let minimal = r#"{"scenario": {"scenario": "mvt", "n_mz": 50, "n_dz": 50,
            "alpha": {"sigma2_a": 0.5, "sigma2_c": 0.3, "sigma2_e": 0.2}, "df": 4.5, "seed": 1},
            "estimators": [{"estimator": "GEE2-NACE"}], "replicates": 2}"#;
        let m: StudyConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.center, Some(CenterMode::PerZygosity));
        assert_eq!(m.fit, FitOptions::default());
    }
}
