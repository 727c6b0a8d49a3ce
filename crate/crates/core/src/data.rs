//! Twin-pair observations, CSV ingestion, residualization and centering.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zygosity {
    #[serde(rename = "MZ")]
    Mz,
    #[serde(rename = "DZ")]
    Dz,
}

impl Zygosity {
    /// Kinship weight: the off-diagonal of the 2×2 genomic relationship matrix.
    pub fn kinship(self) -> f64 {
        match self {
            Zygosity::Mz => 1.0,
            Zygosity::Dz => 0.5,
        }
    }

    /// Zygosity indicator used in the Falconer linear predictors (MZ = 1, DZ = 0).
    pub fn indicator(self) -> f64 {
        match self {
            Zygosity::Mz => 1.0,
            Zygosity::Dz => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Zygosity::Mz => "MZ",
            Zygosity::Dz => "DZ",
        }
    }
}

impl fmt::Display for Zygosity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zygosity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MZ" => Ok(Zygosity::Mz),
            "DZ" => Ok(Zygosity::Dz),
            other => Err(format!("unknown zygosity token `{other}` (expected MZ or DZ)")),
        }
    }
}

/// One twin pair. Covariates are pair-level and stored in the order of the
/// owning dataset's `covariate_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinPair {
    pub y1: f64,
    pub y2: f64,
    pub zygosity: Zygosity,
    pub covariates: Vec<f64>,
}

impl TwinPair {
    pub fn new(y1: f64, y2: f64, zygosity: Zygosity) -> Self {
        TwinPair {
            y1,
            y2,
            zygosity,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    Global,
    #[default]
    PerZygosity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TwinDataset {
    pub pairs: Vec<TwinPair>,
    pub covariate_names: Vec<String>,
}

impl TwinDataset {
    /// Builds a dataset, checking that every pair carries one value per
    /// named covariate and that trait values are finite.
    pub fn new(pairs: Vec<TwinPair>, covariate_names: Vec<String>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.covariates.len() != covariate_names.len() {
                return Err(Error::Usage(format!(
                    "pair {i} carries {} covariates, expected {}",
                    p.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !p.y1.is_finite() || !p.y2.is_finite() {
                return Err(Error::Domain(format!("pair {i} has a non-finite trait value")));
            }
        }
        Ok(TwinDataset {
            pairs,
            covariate_names,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_mz(&self) -> usize {
        self.count(Zygosity::Mz)
    }

    pub fn n_dz(&self) -> usize {
        self.count(Zygosity::Dz)
    }

    pub fn count(&self, z: Zygosity) -> usize {
        self.pairs.iter().filter(|p| p.zygosity == z).count()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Errors unless both zygosity groups are represented.
    pub fn require_both_groups(&self) -> Result<()> {
        let (n_mz, n_dz) = (self.n_mz(), self.n_dz());
        if n_mz == 0 || n_dz == 0 {
            return Err(Error::InsufficientData(format!(
                "need at least one MZ and one DZ pair (have {n_mz} MZ, {n_dz} DZ)"
            )));
        }
        Ok(())
    }

    /// Subset of pairs matching a predicate, keeping the covariate schema.
    pub fn filter(&self, keep: impl Fn(&TwinPair) -> bool) -> TwinDataset {
        TwinDataset {
            pairs: self.pairs.iter().filter(|p| keep(p)).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Every trait value multiplied by `k`.
    pub fn scaled(&self, k: f64) -> TwinDataset {
        let mut out = self.clone();
        for p in &mut out.pairs {
            p.y1 *= k;
            p.y2 *= k;
        }
        out
    }

    /// Twin labels swapped within every pair.
    pub fn swapped(&self) -> TwinDataset {
        let mut out = self.clone();
        for p in &mut out.pairs {
            std::mem::swap(&mut p.y1, &mut p.y2);
        }
        out
    }

    /// Sample variance of individual trait values within one zygosity group
    /// (group mean removed, n − 1 denominator over individuals).
    pub fn sample_variance(&self, z: Zygosity) -> Option<f64> {
        let vals: Vec<f64> = self
            .pairs
            .iter()
            .filter(|p| p.zygosity == z)
            .flat_map(|p| [p.y1, p.y2])
            .collect();
        if vals.len() < 2 {
            return None;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        Some(vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
    }
}

/// Encodes a categorical sex column as 0/1; `one_label` maps to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SexCoding {
    pub column: String,
    pub one_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadOptions {
    pub trait_cols: [String; 2],
    pub zygosity_col: String,
    pub covariate_cols: Vec<String>,
    pub sex: Option<SexCoding>,
}

impl ReadOptions {
    pub fn new(trait1: &str, trait2: &str, zygosity_col: &str) -> Self {
        ReadOptions {
            trait_cols: [trait1.to_string(), trait2.to_string()],
            zygosity_col: zygosity_col.to_string(),
            covariate_cols: Vec::new(),
            sex: None,
        }
    }

    pub fn covariates<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.covariate_cols = cols.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn sex(mut self, column: &str, one_label: &str) -> Self {
        self.sex = Some(SexCoding {
            column: column.to_string(),
            one_label: one_label.to_string(),
        });
        self
    }
}

pub fn read_csv(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<TwinDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file, opts)
}

/// Parses twin pairs from any CSV byte stream. Rows with an empty required
/// cell are rejected rather than imputed.
pub fn read_csv_from<R: Read>(reader: R, opts: &ReadOptions) -> Result<TwinDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let t1 = find(&opts.trait_cols[0])?;
    let t2 = find(&opts.trait_cols[1])?;
    let zc = find(&opts.zygosity_col)?;

    let mut covariate_names = opts.covariate_cols.clone();
    if let Some(sex) = &opts.sex {
        if !covariate_names.contains(&sex.column) {
            covariate_names.push(sex.column.clone());
        }
    }
    let cov_idx = covariate_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let sex_slot = opts
        .sex
        .as_ref()
        .and_then(|s| covariate_names.iter().position(|c| *c == s.column));

    let mut pairs = Vec::new();
    let mut sex_labels = BTreeSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let cell = |idx: usize, name: &str| -> Result<&str> {
            match record.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    message: format!("missing value in column `{name}`"),
                }),
            }
        };
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = cell(idx, name)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{name}`: `{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{name}`: non-finite value `{raw}`"),
                });
            }
            Ok(v)
        };

        let y1 = number(t1, &opts.trait_cols[0])?;
        let y2 = number(t2, &opts.trait_cols[1])?;
        let zygosity: Zygosity = cell(zc, &opts.zygosity_col)?
            .parse()
            .map_err(|message| Error::Parse { line, message })?;

        let mut covariates = Vec::with_capacity(cov_idx.len());
        for (slot, (&idx, name)) in cov_idx.iter().zip(&covariate_names).enumerate() {
            if Some(slot) == sex_slot {
                let label = cell(idx, name)?;
                sex_labels.insert(label.to_string());
                if sex_labels.len() > 2 {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "sex column `{name}` has more than two distinct labels: {:?}",
                            sex_labels
                        ),
                    });
                }
                let one = &opts.sex.as_ref().expect("sex slot implies coding").one_label;
                covariates.push(if label == one { 1.0 } else { 0.0 });
            } else {
                covariates.push(number(idx, name)?);
            }
        }
        pairs.push(TwinPair {
            y1,
            y2,
            zygosity,
            covariates,
        });
    }
    TwinDataset::new(pairs, covariate_names)
}

/// Writes the dataset with columns `y1,y2,zygosity,<covariates…>`. Floats are
/// written in shortest round-trip form, so reading back is bit-exact.
pub fn write_csv(data: &TwinDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(data, file)
}

pub fn write_csv_to<W: Write>(data: &TwinDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y1".to_string(), "y2".to_string(), "zygosity".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for p in &data.pairs {
        let mut rec = vec![p.y1.to_string(), p.y2.to_string(), p.zygosity.to_string()];
        rec.extend(p.covariates.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// OLS fit of the mean model removed by [`residualize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualizationModel {
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub covariate_names: Vec<String>,
}

impl ResidualizationModel {
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(covariates)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

/// Regresses the stacked individual trait values (two per pair) on an
/// intercept plus every covariate and replaces y1, y2 by the residuals.
pub fn residualize(data: &TwinDataset) -> Result<(TwinDataset, ResidualizationModel)> {
    let k = data.covariate_names.len();
    let n_obs = 2 * data.len();
    if n_obs < k + 2 {
        return Err(Error::InsufficientData(format!(
            "residualization with {k} covariates needs at least {} individuals, have {n_obs}",
            k + 2
        )));
    }
    let x = DMatrix::from_fn(n_obs, k + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            data.pairs[i / 2].covariates[j - 1]
        }
    });
    let y = DVector::from_fn(n_obs, |i, _| {
        let p = &data.pairs[i / 2];
        if i % 2 == 0 {
            p.y1
        } else {
            p.y2
        }
    });

    let dependent = linalg::dependent_columns(&x, 1e-10);
    if !dependent.is_empty() {
        let names: Vec<&str> = dependent
            .iter()
            .map(|&j| {
                if j == 0 {
                    "(intercept)"
                } else {
                    data.covariate_names[j - 1].as_str()
                }
            })
            .collect();
        return Err(Error::Singular(format!(
            "residualization design is rank deficient; collinear column(s): {}",
            names.join(", ")
        )));
    }

    let qr = x.clone().qr();
    let qty = qr.q().transpose() * &y;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("residualization R factor is singular".into()))?;
    let model = ResidualizationModel {
        coefficients: beta.iter().cloned().collect(),
        covariate_names: data.covariate_names.clone(),
    };

    let mut resid = y - &x * &beta;
    // QR residuals are orthogonal to the intercept up to rounding; remove the
    // leftover so the mean is zero to working precision.
    let drift = resid.mean();
    resid.add_scalar_mut(-drift);

    let mut out = data.clone();
    for (i, p) in out.pairs.iter_mut().enumerate() {
        p.y1 = resid[2 * i];
        p.y2 = resid[2 * i + 1];
    }
    Ok((out, model))
}

/// Subtracts the global or per-zygosity mean of individual trait values.
pub fn center(data: &TwinDataset, mode: CenterMode) -> Result<TwinDataset> {
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot center an empty dataset".into()));
    }
    let mean_of = |z: Option<Zygosity>| -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in data.pairs.iter().filter(|p| z.is_none_or(|z| p.zygosity == z)) {
            sum += p.y1 + p.y2;
            n += 2;
        }
        if n == 0 {
            return Err(Error::InsufficientData(format!(
                "no {} pairs to center",
                z.map_or("", Zygosity::as_str)
            )));
        }
        Ok(sum / n as f64)
    };
    let mut out = data.clone();
    match mode {
        CenterMode::Global => {
            let m = mean_of(None)?;
            for p in &mut out.pairs {
                p.y1 -= m;
                p.y2 -= m;
            }
        }
        CenterMode::PerZygosity => {
            let m_mz = mean_of(Some(Zygosity::Mz))?;
            let m_dz = mean_of(Some(Zygosity::Dz))?;
            for p in &mut out.pairs {
                let m = match p.zygosity {
                    Zygosity::Mz => m_mz,
                    Zygosity::Dz => m_dz,
                };
                p.y1 -= m;
                p.y2 -= m;
            }
        }
    }
    Ok(out)
}
