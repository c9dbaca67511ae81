//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub(crate) fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub(crate) fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    sym.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

fn rank_tolerance(m: &DMatrix<f64>, sv: &DVector<f64>) -> f64 {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax
}

/// Numerical rank with the usual `max(m, n) * eps * sigma_max` cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let tol = rank_tolerance(m, &sv);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Ratio of extreme singular values (infinite when rank-deficient).
#[allow(dead_code)]
pub(crate) fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Moore-Penrose pseudoinverse.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sv = singular_values(m);
    let tol = rank_tolerance(m, &sv);
    m.clone()
        .pseudo_inverse(tol)
        .expect("pseudo_inverse with non-negative tolerance")
}

/// Stack blocks horizontally.
pub(crate) fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, DMatrix::nrows);
    let cols: usize = blocks.iter().map(DMatrix::ncols).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Split `m` column-wise into blocks of `width` columns.
pub(crate) fn hsplit(m: &DMatrix<f64>, width: usize, count: usize) -> Vec<DMatrix<f64>> {
    (0..count)
        .map(|i| m.columns(i * width, width).into_owned())
        .collect()
}

/// Frobenius distance relative to the reference norm (absolute when the
/// reference is zero).
pub fn relative_frobenius(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let diff = (a - reference).norm();
    let scale = reference.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
