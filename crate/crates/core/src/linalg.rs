//! Small dense linear-algebra helpers shared by the regression and solver code.

use nalgebra::{DMatrix, DVector};

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them. Columns are scanned left to right with modified
/// Gram-Schmidt; a column whose residual norm falls below `rel_tol` times its
/// own norm is reported as dependent.
pub fn dependent_columns(x: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(x.ncols());
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut resid = col;
        for b in &basis {
            let proj = b.dot(&resid);
            resid.axpy(-proj, b, 1.0);
        }
        // second pass for numerical orthogonality
        for b in &basis {
            let proj = b.dot(&resid);
            resid.axpy(-proj, b, 1.0);
        }
        let rnorm = resid.norm();
        if norm == 0.0 || rnorm <= rel_tol * norm {
            dependent.push(j);
        } else {
            basis.push(resid / rnorm);
        }
    }
    dependent
}

/// Condition number of a symmetric positive semidefinite matrix after
/// symmetric diagonal equilibration, so that parameters on very different
/// scales do not masquerade as singularity. Returns infinity when the matrix
/// has a non-positive diagonal entry or eigenvalue.
pub fn equilibrated_condition(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut scaled = a.clone();
    for i in 0..n {
        if a[(i, i)] <= 0.0 || !a[(i, i)].is_finite() {
            return f64::INFINITY;
        }
    }
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] = a[(i, j)] / (a[(i, i)] * a[(j, j)]).sqrt();
        }
    }
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    Some(symmetrize(&inv))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Quadratic form gᵀ A g.
pub fn quad_form(a: &DMatrix<f64>, g: &[f64]) -> f64 {
    let n = g.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * g[j];
        }
        acc += g[i] * row;
    }
    acc
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}
