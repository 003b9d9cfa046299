//! Thin helpers over `nalgebra` for the small dense matrices used here.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{numeric, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Row-major `n × n` slice to a matrix.
pub fn from_row_major(n: usize, a: &[f64]) -> Mat {
    DMatrix::from_row_slice(n, n, a)
}

pub fn to_row_major(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eigen_range(m: &Mat) -> (f64, f64) {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

pub fn min_singular_value(m: &Mat) -> f64 {
    m.clone().singular_values().min()
}

/// Frobenius norm of a row-major slice.
pub fn frobenius(a: &[f64]) -> f64 {
    crate::geometry::norm2(a)
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Mat) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.clone().cholesky().ok_or_else(|| numeric("matrix is not positive definite"))
}

/// `[[I, 0], [m, I]]` for a `d × d` block `m`.
pub fn block_lower(d: usize, m: &Mat) -> Mat {
    let mut r = Mat::identity(2 * d, 2 * d);
    r.view_mut((d, 0), (d, d)).copy_from(m);
    r
}

/// Symmetrizes in place.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
