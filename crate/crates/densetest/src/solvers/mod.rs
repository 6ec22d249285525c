//! Optimization kernels: lasso, the direction program, the projected l1 program
//! and a power-iteration eigenvalue routine.

mod direction;
mod lasso;
mod projected;
mod spectral;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use direction::direction_solver;
pub use lasso::{lasso, lasso_traced, lasso_objective, lasso_kkt_residual};
pub use projected::{projected_l1, ProjectedProblem};
pub use spectral::spectral_norm;

/// Key used for the post-hoc variance floor check, which never makes a solve infeasible.
pub const VARIANCE_FLOOR: &str = "variance_floor";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            tol: 1e-8,
            verbose: false,
        }
    }
}


#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub feasibility_violations: BTreeMap<String, f64>,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        self.converged
            && self
                .feasibility_violations
                .keys()
                .all(|k| k == VARIANCE_FLOOR)
    }
}
