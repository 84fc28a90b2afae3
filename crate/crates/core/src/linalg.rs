//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};

/// Relative eigenvalue cutoff used to decide the numerical range of a PSD matrix.
pub const RANK_TOL: f64 = 1e-12;

/// `sum_i w_i x_i x_i^T` over the rows `x_i` of `rows`.
pub fn weighted_gram(rows: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let p = rows.ncols();
    let mut out = DMatrix::zeros(p, p);
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let x = rows.row(i);
        for a in 0..p {
            let wa = w * x[a];
            for b in a..p {
                out[(a, b)] += wa * x[b];
            }
        }
    }
    symmetrize_upper(&mut out);
    out
}

fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
}

/// `x^T m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let p = x.len();
    let mut s = 0.0;
    for a in 0..p {
        let mut row = 0.0;
        for b in 0..p {
            row += m[(a, b)] * x[b];
        }
        s += x[a] * row;
    }
    s
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

/// Symmetric PSD square root; negative eigenvalues from rounding are clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let top = e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| if l > RANK_TOL * top && l > 0.0 { 1.0 / l } else { 0.0 }));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Extreme generalized eigenvalues of `a` relative to a PSD `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenEig {
    pub min: f64,
    pub max: f64,
    /// `b` is singular and the problem was restricted to its range.
    pub rank_deficient: bool,
}

/// Smallest and largest `l` with `a x = l b x`, restricted to the range of `b`.
pub fn gen_eig_extremes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GenEig> {
    if a.shape() != b.shape() || !a.is_square() {
        return invalid("generalized eigenproblem needs square matrices of equal size");
    }
    let e = sym_eigen(b);
    let top = e.eigenvalues.iter().fold(0.0f64, |x, &y| x.max(y));
    if top <= 0.0 {
        return invalid("reference matrix is zero");
    }
    let keep: Vec<usize> = (0..e.eigenvalues.len()).filter(|&k| e.eigenvalues[k] > RANK_TOL * top).collect();
    let p = a.nrows();
    let mut w = DMatrix::zeros(p, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let s = 1.0 / e.eigenvalues[k].sqrt();
        w.set_column(c, &(e.eigenvectors.column(k) * s));
    }
    let reduced = w.transpose() * a * &w;
    let r = sym_eigen(&reduced);
    let min = r.eigenvalues.iter().fold(f64::INFINITY, |x, &y| x.min(y));
    let max = r.eigenvalues.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
    Ok(GenEig { min, max, rank_deficient: keep.len() < p })
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
