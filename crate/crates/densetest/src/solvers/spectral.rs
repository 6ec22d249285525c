use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue of a symmetric matrix by shifted power iteration.
pub fn spectral_norm(q: &DMatrix<f64>, tol: f64) -> f64 {
    let n = q.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut shift = 0.0_f64;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)].abs()).sum();
        shift = shift.max(off - q[(i, i)]);
    }
    let shifted = q + DMatrix::identity(n, n) * shift;
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() / n as f64);
    x /= x.norm();
    let mut lambda = x.dot(&(q * &x));
    for _ in 0..1_000_000 {
        let y = &shifted * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return lambda;
        }
        x = y / norm;
        let qx = q * &x;
        lambda = x.dot(&qx);
        let resid = (qx - &x * lambda).norm();
        if resid <= tol * lambda.abs().max(q.amax()) {
            break;
        }
    }
    lambda
}
