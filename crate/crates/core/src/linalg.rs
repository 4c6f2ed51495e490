//! Small dense linear algebra on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative pivot floor below which a Gram matrix is treated as singular.
const PIVOT_FLOOR: f64 = 1e-12;

/// Cholesky factor of a symmetric positive definite matrix, or `None` when the
/// matrix is singular to working precision.
pub fn spd_cholesky(a: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale.is_nan() || scale <= 0.0 || scale.is_infinite() {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= PIVOT_FLOOR * scale {
        return None;
    }
    Some(chol)
}

pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    spd_cholesky(a).map(|c| c.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    spd_cholesky(a).map(|c| c.inverse())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `vᵀ A v` for a square `A` stored row-major in nalgebra.
pub fn quad_form(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += a[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
