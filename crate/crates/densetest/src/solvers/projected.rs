use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolverSettings, VARIANCE_FLOOR};
use crate::linalg::l1;

const INFEASIBLE_TOL: f64 = 1e-6;

/// min ||q||_1 subject to |xi'q - anchor| <= eta and ||b^{-1} W'(z - Wq)||_inf <= lambda/4,
/// with the floor b^{-1}||z - Wq||^2 >= 1/(2M) verified afterwards.
#[derive(Debug, Clone)]
pub struct ProjectedProblem<'a> {
    pub w: &'a DMatrix<f64>,
    pub z: &'a DVector<f64>,
    pub xi: &'a DVector<f64>,
    pub anchor: f64,
    pub eta: f64,
    pub lambda: f64,
    pub m: f64,
}

struct Box {
    c: DMatrix<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl ProjectedProblem<'_> {
    fn gram(&self) -> (DMatrix<f64>, DVector<f64>) {
        let b = self.w.nrows() as f64;
        (self.w.tr_mul(self.w) / b, self.w.tr_mul(self.z) / b)
    }

    /// Constraint rows with the scalar row normalized to unit length.
    fn constraint_box(&self) -> Box {
        let (g, gz) = self.gram();
        let dim = self.xi.len();
        let nx = self.xi.norm();
        let has_row = nx > 0.0;
        let k = dim + usize::from(has_row);
        let mut c = DMatrix::zeros(k, dim);
        let mut lo = DVector::zeros(k);
        let mut hi = DVector::zeros(k);
        let off = usize::from(has_row);
        if has_row {
            c.row_mut(0).copy_from(&(self.xi / nx).transpose());
            lo[0] = (self.anchor - self.eta) / nx;
            hi[0] = (self.anchor + self.eta) / nx;
        }
        c.rows_mut(off, dim).copy_from(&g);
        for j in 0..dim {
            lo[off + j] = gz[j] - self.lambda / 4.0;
            hi[off + j] = gz[j] + self.lambda / 4.0;
        }
        Box { c, lo, hi }
    }

    /// Violations of the two convex constraints in their natural units.
    pub fn violations(&self, q: &DVector<f64>) -> (f64, f64) {
        let (g, gz) = self.gram();
        let scalar = (self.xi.dot(q) - self.anchor).abs() - self.eta;
        let band = (gz - g * q).amax() - self.lambda / 4.0;
        (scalar.max(0.0), band.max(0.0))
    }

    pub fn variance(&self, q: &DVector<f64>) -> f64 {
        (self.z - self.w * q).norm_squared() / self.w.nrows() as f64
    }
}

pub fn projected_l1(problem: &ProjectedProblem<'_>, settings: &SolverSettings) -> (DVector<f64>, SolveReport) {
    let dim = problem.xi.len();
    let mut report = SolveReport::default();
    let zero = DVector::zeros(dim);
    let (s0, b0) = problem.violations(&zero);
    let q = if s0 == 0.0 && b0 == 0.0 {
        report.converged = true;
        zero
    } else {
        if problem.xi.norm() == 0.0 && (problem.anchor.abs() > problem.eta) {
            report
                .feasibility_violations
                .insert("scalar_band".into(), problem.anchor.abs() - problem.eta);
            return (zero, report);
        }
        let bx = problem.constraint_box();
        match simplex(&bx) {
            Ok(q) => {
                report.converged = true;
                report.iterations = 1;
                polish(&bx, q, 10.0 * settings.tol)
            }
            Err(e) => {
                if settings.verbose {
                    eprintln!("projected simplex: {e:?}");
                }
                report.residual = f64::INFINITY;
                zero
            }
        }
    };
    finish(problem, q, report)
}

fn finish(problem: &ProjectedProblem<'_>, q: DVector<f64>, mut report: SolveReport) -> (DVector<f64>, SolveReport) {
    let (scalar, band) = problem.violations(&q);
    report.residual = report.residual.max(scalar).max(band);
    let nx = problem.xi.norm().max(f64::MIN_POSITIVE);
    if scalar / nx > INFEASIBLE_TOL * (1.0 + problem.anchor.abs() / nx) {
        report.feasibility_violations.insert("scalar_band".into(), scalar);
    }
    if band > INFEASIBLE_TOL * (1.0 + problem.lambda) {
        report.feasibility_violations.insert("residual_band".into(), band);
    }
    let floor = 1.0 / (2.0 * problem.m);
    let var = problem.variance(&q);
    if var < floor {
        report.feasibility_violations.insert(VARIANCE_FLOOR.into(), floor - var);
    }
    if report.converged && report.feasibility_violations.keys().any(|k| k != VARIANCE_FLOOR) {
        report.converged = false;
    }
    (q, report)
}

/// min 1'(q+ + q-) subject to lo <= C(q+ - q-) <= hi, q+, q- >= 0.
fn simplex(bx: &Box) -> Result<DVector<f64>, microlp::Error> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let (k, dim) = bx.c.shape();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let plus: Vec<_> = (0..dim).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    let minus: Vec<_> = (0..dim).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for i in 0..k {
        let row: Vec<_> = (0..dim)
            .filter(|&j| bx.c[(i, j)] != 0.0)
            .flat_map(|j| [(plus[j], bx.c[(i, j)]), (minus[j], -bx.c[(i, j)])])
            .collect();
        if bx.lo[i] == bx.hi[i] {
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, bx.lo[i]);
        } else {
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, bx.lo[i]);
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, bx.hi[i]);
        }
    }
    let solution = lp.solve()?.into_solution().map_err(|_| microlp::Error::InternalError("interrupted".into()))?;
    Ok(DVector::from_fn(dim, |j, _| solution.var_value(plus[j]) - solution.var_value(minus[j])))
}

/// Re-solve on the guessed active set; keep the candidate if it is feasible, keeps the signs and
/// costs no more than the solver tolerance allows.
fn polish(bx: &Box, q: DVector<f64>, tol: f64) -> DVector<f64> {
    let (k, dim) = bx.c.shape();
    let scale = q.amax().max(1.0);
    let free: Vec<usize> = (0..dim).filter(|&j| q[j].abs() > 1e-8 * scale).collect();
    if free.is_empty() {
        return q;
    }
    let cq = &bx.c * &q;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..k {
        let width = (bx.hi[i] - bx.lo[i]).abs().max(1e-12);
        let tol = 1e-6 * width.max(1.0);
        if (cq[i] - bx.lo[i]).abs() <= tol {
            rows.push(i);
            rhs.push(bx.lo[i]);
        } else if (cq[i] - bx.hi[i]).abs() <= tol {
            rows.push(i);
            rhs.push(bx.hi[i]);
        }
    }
    if rows.is_empty() {
        return q;
    }
    let a = DMatrix::from_fn(rows.len(), free.len(), |r, c| bx.c[(rows[r], free[c])]);
    let b = DVector::from_vec(rhs);
    let Ok(sol) = a.svd(true, true).solve(&b, 1e-12) else {
        return q;
    };
    let mut cand = DVector::zeros(dim);
    for (c, &j) in free.iter().enumerate() {
        cand[j] = sol[c];
    }
    let ccand = &bx.c * &cand;
    let feasible = (0..k).all(|i| {
        let slack = 1e-11 * (1.0 + bx.lo[i].abs().max(bx.hi[i].abs()));
        ccand[i] >= bx.lo[i] - slack && ccand[i] <= bx.hi[i] + slack
    });
    let sign_kept = free.iter().all(|&j| cand[j] * q[j] >= 0.0);
    if feasible && sign_kept && l1(&cand) <= l1(&q) + tol * scale {
        cand
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn feasible_zero_returns_zero() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let z = dvector![0.1, -0.1, 0.0];
        let xi = dvector![1.0, 0.0];
        let p = ProjectedProblem { w: &w, z: &z, xi: &xi, anchor: 0.1, eta: 0.5, lambda: 10.0, m: 4.0 };
        let (q, rep) = projected_l1(&p, &SolverSettings::default());
        assert_eq!(q, DVector::zeros(2));
        assert!(rep.converged);
    }

    #[test]
    fn binding_scalar_band_one_dimensional() {
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let z = dvector![2.0, 2.0];
        let xi = dvector![1.0];
        let p = ProjectedProblem { w: &w, z: &z, xi: &xi, anchor: 2.0, eta: 0.5, lambda: 1e6, m: 4.0 };
        let (q, rep) = projected_l1(&p, &SolverSettings::default());
        assert_abs_diff_eq!(q[0], 1.5, epsilon = 1e-10);
        assert!(rep.is_feasible());
    }

    #[test]
    fn empty_row_with_off_anchor_is_infeasible() {
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let z = dvector![2.0, 2.0];
        let xi = dvector![0.0];
        let p = ProjectedProblem { w: &w, z: &z, xi: &xi, anchor: 1.0, eta: 0.5, lambda: 1e6, m: 4.0 };
        let (_, rep) = projected_l1(&p, &SolverSettings::default());
        assert!(!rep.is_feasible());
    }

    #[test]
    fn variance_floor_is_advisory() {
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let z = dvector![2.0, 2.0];
        let xi = dvector![1.0];
        // the only feasible point fits z exactly
        let p = ProjectedProblem { w: &w, z: &z, xi: &xi, anchor: 2.0, eta: 0.0, lambda: 1e6, m: 4.0 };
        let (q, rep) = projected_l1(&p, &SolverSettings::default());
        assert_abs_diff_eq!(q[0], 2.0, epsilon = 1e-9);
        assert!(rep.feasibility_violations.contains_key(VARIANCE_FLOOR));
        assert!(rep.is_feasible());
    }
}
