use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolverSettings};
use crate::linalg::soft_threshold;

const REL_STEP: f64 = 1e-14;

/// min u'Su subject to ||xi - S u||_inf <= lambda, then checks u'Su <= eta.
///
/// Solved through its dual, min v'Sv - 2 xi'v + 2 lambda ||v||_1, whose minimizer is
/// the primal solution.
pub fn direction_solver(
    sigma_hat: &DMatrix<f64>,
    xi: &DVector<f64>,
    lambda: f64,
    eta: f64,
    settings: &SolverSettings,
) -> (DVector<f64>, SolveReport) {
    let dim = xi.len();
    let mut report = SolveReport::default();
    let scale = xi.amax();
    if scale == 0.0 {
        report.converged = true;
        return (DVector::zeros(dim), report);
    }
    let target = xi / scale;
    let lam = lambda / scale;
    let mut v = DVector::zeros(dim);
    let mut sv = DVector::<f64>::zeros(dim);
    let mut iterations = 0;
    let mut diverged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        let mut max_step = 0.0_f64;
        for j in 0..dim {
            let sjj = sigma_hat[(j, j)];
            let partial = target[j] - (sv[j] - sjj * v[j]);
            let new = if sjj > 0.0 {
                soft_threshold(partial, lam) / sjj
            } else if partial.abs() > lam {
                diverged = true;
                break;
            } else {
                0.0
            };
            let old = v[j];
            if new != old {
                sv.axpy(new - old, &sigma_hat.column(j), 1.0);
                v[j] = new;
                max_step = max_step.max((new - old).abs());
            }
        }
        if diverged || !v.iter().all(|x| x.is_finite()) {
            diverged = true;
            break;
        }
        if max_step <= REL_STEP * v.amax() {
            break;
        }
    }
    let u = &v * scale;
    let su = sigma_hat * &u;
    let band = (xi - &su).amax();
    report.iterations = iterations;
    report.residual = (band - lambda).max(0.0);
    report.converged = !diverged && report.residual <= settings.tol * lambda.max(scale);
    if diverged {
        report
            .feasibility_violations
            .insert("correlation_band".into(), f64::INFINITY);
        return (u, report);
    }
    if report.residual > settings.tol * lambda.max(scale) {
        report
            .feasibility_violations
            .insert("correlation_band".into(), report.residual);
    }
    let quad = u.dot(&su);
    if quad > eta * (1.0 + 1e-12) {
        report
            .feasibility_violations
            .insert("variance_cap".into(), quad - eta);
    }
    (u, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn zero_target_gives_zero() {
        let s = DMatrix::identity(3, 3);
        let (u, rep) = direction_solver(&s, &DVector::zeros(3), 0.1, 1.0, &SolverSettings::default());
        assert_eq!(u, DVector::zeros(3));
        assert!(rep.is_feasible());
    }

    #[test]
    fn identity_is_soft_threshold() {
        let s = DMatrix::identity(4, 4);
        let xi = dvector![1.0, -0.3, 0.05, -2.0];
        let (u, rep) = direction_solver(&s, &xi, 0.2, 100.0, &SolverSettings::default());
        assert_abs_diff_eq!(u, xi.map(|v| soft_threshold(v, 0.2)), epsilon = 1e-14);
        assert!(rep.is_feasible());
    }

    #[test]
    fn cap_violation_is_reported() {
        let s = DMatrix::identity(2, 2);
        let xi = dvector![3.0, 0.0];
        let (_, rep) = direction_solver(&s, &xi, 0.1, 1.0, &SolverSettings::default());
        assert!(!rep.is_feasible());
        assert!(rep.feasibility_violations.contains_key("variance_cap"));
    }

    #[test]
    fn null_direction_with_large_target_is_infeasible() {
        let s = DMatrix::from_diagonal(&dvector![1.0, 0.0]);
        let xi = dvector![0.0, 1.0];
        let (_, rep) = direction_solver(&s, &xi, 0.1, 10.0, &SolverSettings::default());
        assert!(!rep.is_feasible());
        assert!(rep.feasibility_violations.contains_key("correlation_band"));
    }
}
