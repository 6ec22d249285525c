use densetest::solvers::{
    direction_solver, lasso, lasso_kkt_residual, lasso_traced, projected_l1, spectral_norm, ProjectedProblem,
    SolverSettings,
};
use densetest::{linalg, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(b: usize, q: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng::stream(seed);
    let w = DMatrix::from_fn(b, q, |_, _| r.sample::<f64, _>(StandardNormal));
    let z = DVector::from_fn(b, |i, _| w[(i, 0)] * 0.8 - w[(i, q - 1)] * 0.3 + r.sample::<f64, _>(StandardNormal));
    (w, z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_descends_and_certifies(seed in any::<u64>(), b in 10usize..60, q in 2usize..15, lam in 0.01f64..1.0) {
        let (w, z) = gaussian(b, q, seed);
        let settings = SolverSettings::default();
        let (x, report, trace) = lasso_traced(&w, &z, lam, &settings);
        for pair in trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
        prop_assert!(report.converged);
        let scale = (w.tr_mul(&z) * (2.0 / b as f64)).amax().max(lam).max(1.0);
        prop_assert!(lasso_kkt_residual(&w, &z, lam, &x) <= settings.tol * scale);
    }

    #[test]
    fn lasso_is_scale_equivariant(seed in any::<u64>(), c in 0.1f64..10.0, lam in 0.05f64..0.5) {
        let (w, z) = gaussian(40, 6, seed);
        let settings = SolverSettings { tol: 1e-12, ..SolverSettings::default() };
        let (x, _) = lasso(&w, &z, lam, &settings);
        let (xc, _) = lasso(&w, &(&z * c), lam * c, &settings);
        prop_assert!((&xc - &x * c).amax() <= 1e-10 * c.max(1.0), "{}", (&xc - &x * c).amax());
    }

    #[test]
    fn direction_meets_band(seed in any::<u64>(), lam in 0.05f64..0.5) {
        let (w, _) = gaussian(80, 6, seed);
        let s = linalg::gram(&w) / 80.0;
        let mut r = rng::stream(seed ^ 1);
        let xi = DVector::from_fn(6, |_, _| r.random_range(-1.0..1.0));
        let (u, report) = direction_solver(&s, &xi, lam, 1e6, &SolverSettings::default());
        if report.converged {
            prop_assert!((&xi - &s * &u).amax() <= lam + 1e-8);
        }
    }

    #[test]
    fn projected_beats_feasible_certificate(seed in any::<u64>(), lam in 0.05f64..0.5, eta in 0.01f64..0.5) {
        let (w, z) = gaussian(60, 5, seed);
        let g = w.tr_mul(&w);
        let ols = g.clone().cholesky().unwrap().solve(&w.tr_mul(&z));
        let mut r = rng::stream(seed ^ 2);
        let xi = DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0));
        let problem = ProjectedProblem { w: &w, z: &z, xi: &xi, anchor: xi.dot(&ols), eta, lambda: lam, m: 4.0 };
        let (a, b) = problem.violations(&ols);
        prop_assert!(a <= 1e-12 && b <= 1e-9);
        let (q, report) = projected_l1(&problem, &SolverSettings::default());
        prop_assert!(report.converged);
        let (sv, bv) = problem.violations(&q);
        prop_assert!(sv <= 1e-8 && bv <= 1e-8, "violations {sv} {bv}");
        prop_assert!(linalg::l1(&q) <= linalg::l1(&ols) + 1e-6);
    }
}

#[test]
fn spectral_norm_matches_eigensolver() {
    let mut r = rng::stream(77);
    for _ in 0..50 {
        let a = DMatrix::from_fn(8, 8, |_, _| r.sample::<f64, _>(StandardNormal));
        let sym = &a + a.transpose();
        let expect = linalg::sym_eigenvalues(&sym).max();
        let got = spectral_norm(&sym, 1e-12);
        assert!((got - expect).abs() <= 1e-8 * expect.max(1.0), "{got} vs {expect}");
    }
}
