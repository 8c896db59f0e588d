//! Thin helpers over `faer` shared by the likelihood and Schur modules.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Col, Mat, MatRef, Side};

use crate::error::{Result, StvcError};

/// Cholesky factor of a symmetric positive-definite matrix together with its
/// log-determinant.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    logdet: f64,
    dim: usize,
}

impl SpdFactor {
    /// Factors `a`, reading only its lower triangle.
    pub fn new(a: MatRef<'_, f64>, what: &str) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(StvcError::ShapeMismatch(format!(
                "{what}: expected a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let llt = a
            .llt(Side::Lower)
            .map_err(|_| StvcError::NotPositiveDefinite(what.to_string()))?;
        let l = llt.L();
        let mut logdet = 0.0;
        for i in 0..n {
            let d = l[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(StvcError::NotPositiveDefinite(what.to_string()));
            }
            logdet += 2.0 * d.ln();
        }
        Ok(Self { llt, logdet, dim: n })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_col(&self, rhs: &Col<f64>) -> Col<f64> {
        self.llt.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }

    pub fn inverse(&self) -> Mat<f64> {
        let mut inv = self.llt.inverse();
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `a` by `(a + a') / 2`.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `a' b`.
pub fn cross(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    a.transpose() * b
}

/// `a' v`.
pub fn cross_vec(a: MatRef<'_, f64>, v: &[f64]) -> Col<f64> {
    let v = col_from_slice(v);
    a.transpose() * &v
}

pub fn col_from_slice(v: &[f64]) -> Col<f64> {
    Col::from_fn(v.len(), |i| v[i])
}

pub fn col_to_vec(c: &Col<f64>) -> Vec<f64> {
    (0..c.nrows()).map(|i| c[i]).collect()
}

pub fn dot(a: &Col<f64>, b: &Col<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), b.nrows());
    (0..a.nrows()).map(|i| a[i] * b[i]).sum()
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

/// Largest absolute entry of `a`.
pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Scales row `i` of `a` by `s[i]` and column `j` by `t[j]`.
pub fn scale_rows_cols(a: MatRef<'_, f64>, s: &[f64], t: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| s[i] * a[(i, j)] * t[j])
}
