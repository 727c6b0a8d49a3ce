//! Heritability estimation for twin studies.
//!
//! The crate decomposes trait variance into additive genetic (A), shared
//! environment (C) and non-shared environment (E) proportions from MZ/DZ twin
//! pairs using four estimators: classical NACE, classical Falconer, and the
//! second-order estimating-equation (GEE2) versions of both, which carry
//! robust sandwich standard errors. It also contains the scenario generators
//! and the Monte Carlo harness used to study their coverage.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod moments;
pub mod simulate;
pub mod solver;
pub mod study;

pub use data::{center, read_csv, residualize, write_csv, CenterMode, ReadOptions, TwinDataset, TwinPair, Zygosity};
pub use error::{Error, Result};
pub use estimators::{
    fit, fit_with_variance_covariates, wald_contrast, AceProportions, CovariateFit, CovariateSpec, Estimator,
    FalconerCount, FitOptions, FitResult,
};
pub use moments::{AceParams, CorrLink, MomentModel, VarianceLink, WorkingCov};
pub use solver::{solve, SolverConfig};
