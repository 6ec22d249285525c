use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolverSettings};
use crate::linalg::soft_threshold;

const REL_STEP: f64 = 1e-14;

/// b^{-1} ||z - Wq||^2 + lambda ||q||_1
pub fn lasso_objective(w: &DMatrix<f64>, z: &DVector<f64>, lambda: f64, q: &DVector<f64>) -> f64 {
    let b = w.nrows() as f64;
    (z - w * q).norm_squared() / b + lambda * crate::linalg::l1(q)
}

pub fn lasso_kkt_residual(w: &DMatrix<f64>, z: &DVector<f64>, lambda: f64, q: &DVector<f64>) -> f64 {
    let b = w.nrows() as f64;
    let grad = -(w.tr_mul(&(z - w * q))) * (2.0 / b);
    let mut worst = 0.0_f64;
    for (g, v) in grad.iter().zip(q.iter()) {
        let viol = if *v > 0.0 {
            (g + lambda).abs()
        } else if *v < 0.0 {
            (g - lambda).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

pub fn lasso(
    w: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: f64,
    settings: &SolverSettings,
) -> (DVector<f64>, SolveReport) {
    let (q, rep, _) = run(w, z, lambda, settings, false);
    (q, rep)
}

/// As `lasso`, also returning the objective after every sweep.
pub fn lasso_traced(
    w: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: f64,
    settings: &SolverSettings,
) -> (DVector<f64>, SolveReport, Vec<f64>) {
    run(w, z, lambda, settings, true)
}

fn run(
    w: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: f64,
    settings: &SolverSettings,
    trace: bool,
) -> (DVector<f64>, SolveReport, Vec<f64>) {
    let (b, dim) = w.shape();
    let bf = b as f64;
    let col_sq: Vec<f64> = (0..dim).map(|j| w.column(j).norm_squared() / bf).collect();
    let mut q = DVector::zeros(dim);
    let mut resid = z.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let mut max_step = 0.0_f64;
        for j in 0..dim {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = w.column(j);
            let old = q[j];
            let corr = col.dot(&resid) / bf + col_sq[j] * old;
            let new = soft_threshold(corr, lambda / 2.0) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                q[j] = new;
                max_step = max_step.max((new - old).abs());
            }
        }
        if trace {
            history.push(lasso_objective(w, z, lambda, &q));
        }
        if settings.verbose {
            eprintln!("lasso sweep {iterations}: max step {max_step:.3e}");
        }
        if max_step <= REL_STEP * q.amax() {
            break;
        }
    }
    let residual = lasso_kkt_residual(w, z, lambda, &q);
    let scale = (w.tr_mul(z) * (2.0 / bf)).amax().max(lambda).max(1.0);
    let report = SolveReport {
        converged: residual <= settings.tol * scale,
        iterations,
        residual,
        ..SolveReport::default()
    };
    (q, report, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let c = lo + g * (hi - lo);
            if f(a) < f(c) {
                hi = c;
            } else {
                lo = a;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn large_penalty_gives_zero() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let z = dvector![1.0, -2.0, 0.5];
        let lam = 2.0 * (w.tr_mul(&z) / 3.0).amax();
        let (q, rep) = lasso(&w, &z, lam, &SolverSettings::default());
        assert_eq!(q, DVector::zeros(2));
        assert!(rep.converged);
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        // columns orthogonal with W^T W / b = I
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let z = dvector![3.0, 1.0, -0.5, 0.2];
        let lam = 0.6;
        let (q, rep) = lasso(&w, &z, lam, &SolverSettings::default());
        let c = w.tr_mul(&z) / 4.0;
        let expect = c.map(|v| soft_threshold(v, lam / 2.0));
        assert_abs_diff_eq!(q, expect, epsilon = 1e-14);
        assert!(rep.converged);
    }

    #[test]
    fn scalar_case_matches_line_search() {
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let z = dvector![2.0, 2.0];
        let (q, _) = lasso(&w, &z, 1.0, &SolverSettings::default());
        let oracle = golden_min(|v| ((2.0 - v).powi(2) * 2.0) / 2.0 + v.abs(), -5.0, 5.0);
        assert_abs_diff_eq!(q[0], oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(q[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_columns_are_ignored() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let z = dvector![2.0, 2.0];
        let (q, rep) = lasso(&w, &z, 1.0, &SolverSettings::default());
        assert_eq!(q[0], 0.0);
        assert_abs_diff_eq!(q[1], 1.5, epsilon = 1e-12);
        assert!(rep.converged);
    }
}
