use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().symmetric_eigen().eigenvalues
}

pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(a);
    (ev.min(), ev.max())
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn lu_determinant(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant()
}

/// Lower Cholesky factor, or an eigen-based square root with eigenvalues clamped at `floor`.
pub fn sampling_factor(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("non-finite eigenvalues".into()));
    }
    if eig.eigenvalues.min() < -1e-8 * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::Factorization(format!(
            "matrix has eigenvalue {:.3e}",
            eig.eigenvalues.min()
        )));
    }
    let root = eig.eigenvalues.map(|v| v.max(floor).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub fn select_rows(x: &DMatrix<f64>, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    x.rows(rows.start, rows.len()).into_owned()
}

pub fn select_entries(v: &DVector<f64>, rows: std::ops::Range<usize>) -> DVector<f64> {
    v.rows(rows.start, rows.len()).into_owned()
}

pub fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
