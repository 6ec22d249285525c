use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{select_entries, select_rows};
use crate::model::{PrecisionRow, SpaceConfig};
use crate::solvers::{direction_solver, lasso, projected_l1, ProjectedProblem, SolveReport, SolverSettings};

/// Which form of the interval half-width to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnForm {
    /// Second term carries 2*M2, keeping every constant degree-1 homogeneous in (M1, M2).
    #[default]
    Corrected,
    /// Second term carries (1 + M2) as originally published.
    Published,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningConstants {
    pub lambda_pi: f64,
    pub tau_n: f64,
    pub lambda_omega: f64,
    pub eta_omega: f64,
    pub eta_pi: f64,
    pub c_n: f64,
}

/// c_n split as intercept + slope * s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnTerms {
    pub intercept: f64,
    pub slope: f64,
}

impl CnTerms {
    pub fn at(&self, s: usize) -> f64 {
        self.intercept + self.slope * s as f64
    }
}

struct Pieces {
    lambda_pi: f64,
    tau_n: f64,
    lambda_omega: f64,
    eta_omega: f64,
    eta_pi_slope: f64,
    eta_pi_intercept: f64,
    cn_intercept: f64,
    cn_slope: f64,
}

fn pieces(cfg: &SpaceConfig, n: usize, p: usize, form: CnForm) -> Pieces {
    let m = cfg.m;
    let (m1, m2) = (cfg.m1, cfg.m2);
    let b = (n / 4) as f64;
    let log_p = (p as f64).ln();
    let root = (log_p / b).sqrt();
    let lev = (100.0 / cfg.alpha).ln();
    let caps = (n as f64 * log_p * (m1 * m1 + m2 * m2)).sqrt();
    let lambda_pi = 24.0 * m * root;
    let tau_n = 4.0 * m / b * caps;
    let lambda_omega = 24.0 * root * m.powi(3) * m2;
    let eta_omega = 32.0 * m.powi(5) * m2 * m2;
    let eta_pi_slope = 6408.0 * root * m.powi(4) * m2 * lambda_pi;
    let eta_pi_intercept = 8.0 / b.sqrt() * m * m * m2 * (m * lev).sqrt();
    let bias_factor = match form {
        CnForm::Corrected => 2.0 * m2,
        CnForm::Published => 1.0 + m2,
    };
    let first = 10.0 / b.sqrt() * (m * (4.0 * m2 * m2 * m.powi(3) + m1 * m1) * lev).sqrt();
    let second = 34.0 * m * bias_factor * lambda_pi * lambda_pi;
    let third = 1608.0 / b * m * m * caps * lambda_pi;
    Pieces {
        lambda_pi,
        tau_n,
        lambda_omega,
        eta_omega,
        eta_pi_slope,
        eta_pi_intercept,
        cn_intercept: 2.0 * m * (first + 2.0 * eta_pi_intercept),
        cn_slope: 2.0 * m * (second + third + 2.0 * eta_pi_slope),
    }
}

impl TuningConstants {
    pub fn with_form(cfg: &SpaceConfig, n: usize, p: usize, form: CnForm) -> Self {
        let pc = pieces(cfg, n, p, form);
        let s = cfg.s as f64;
        Self {
            lambda_pi: pc.lambda_pi,
            tau_n: pc.tau_n,
            lambda_omega: pc.lambda_omega,
            eta_omega: pc.eta_omega,
            eta_pi: pc.eta_pi_slope * s + pc.eta_pi_intercept,
            c_n: pc.cn_intercept + pc.cn_slope * s,
        }
    }

    pub fn cn_terms(cfg: &SpaceConfig, n: usize, p: usize, form: CnForm) -> CnTerms {
        let pc = pieces(cfg, n, p, form);
        CnTerms {
            intercept: pc.cn_intercept,
            slope: pc.cn_slope,
        }
    }
}

pub fn tuning_constants(cfg: &SpaceConfig, n: usize, p: usize) -> TuningConstants {
    TuningConstants::with_form(cfg, n, p, CnForm::Corrected)
}

/// Omega_{1,} X'y / n.
pub fn plug_in_estimator(omega_row: &PrecisionRow, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.nrows() != y.len() || x.ncols() != omega_row.omega_row.len() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, y has {}, row has {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            omega_row.omega_row.len()
        )));
    }
    Ok(omega_row.omega_row.dot(&x.tr_mul(y)) / y.len() as f64)
}

pub fn plug_in_dataset(omega_row: &PrecisionRow, data: &Dataset) -> Result<f64> {
    let row = &omega_row.omega_row;
    if row.len() != data.p() {
        return Err(Error::DimensionMismatch("precision row length differs from p".into()));
    }
    let n = data.n() as f64;
    let zy = data.z.dot(&data.y);
    let wy = data.w.tr_mul(&data.y);
    Ok((row[0] * zy + row.rows(1, wy.len()).dot(&wy)) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub set: Vec<usize>,
    #[serde(with = "crate::serde_na::vector")]
    pub xi_tilde: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub xi_hat: DVector<f64>,
}

pub fn screen_with_threshold(data: &Dataset, tau: f64) -> Screen {
    let sp = data.split;
    let b = sp.b_n as f64;
    let h1 = sp.fold(1);
    let h3 = sp.fold(3);
    let xi_tilde = select_rows(&data.w, h1.clone()).tr_mul(&select_entries(&data.y, h1)) / b;
    let set: Vec<usize> = (0..xi_tilde.len()).filter(|&j| xi_tilde[j].abs() > tau).collect();
    let mut xi_hat = DVector::zeros(xi_tilde.len());
    if !set.is_empty() {
        let w3 = data.w.rows(h3.start, h3.len());
        let y3 = data.y.rows(h3.start, h3.len());
        for &j in &set {
            xi_hat[j] = w3.column(j).dot(&y3) / b;
        }
    }
    Screen { set, xi_tilde, xi_hat }
}

pub fn screen_correlations(data: &Dataset, cfg: &SpaceConfig) -> Screen {
    let tc = tuning_constants(cfg, data.n(), data.p());
    screen_with_threshold(data, tc.tau_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Replace the projected estimate by the lasso estimate when a solver is infeasible.
    pub fallback: bool,
    pub cn_form: CnForm,
    pub lasso: SolverSettings,
    pub direction: SolverSettings,
    pub projected: SolverSettings,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            fallback: false,
            cn_form: CnForm::Corrected,
            lasso: SolverSettings::default(),
            direction: SolverSettings::default(),
            projected: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub a_set: Vec<usize>,
    #[serde(with = "crate::serde_na::vector")]
    pub xi_tilde: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub xi_hat_a: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub pi_lasso: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub direction: DVector<f64>,
    pub anchor: f64,
    #[serde(with = "crate::serde_na::vector")]
    pub pi_breve: DVector<f64>,
    #[serde(with = "crate::serde_na::vector")]
    pub v_hat: DVector<f64>,
    pub fallback_used: bool,
    pub lasso_report: SolveReport,
    pub direction_report: SolveReport,
    pub projected_report: SolveReport,
}

pub fn fit_pipeline(data: &Dataset, cfg: &SpaceConfig) -> Result<(NuisanceEstimates, f64)> {
    fit_pipeline_with(data, cfg, &PipelineOptions::default())
}

pub fn fit_pipeline_with(
    data: &Dataset,
    cfg: &SpaceConfig,
    opts: &PipelineOptions,
) -> Result<(NuisanceEstimates, f64)> {
    let (n, p) = (data.n(), data.p());
    if n < 8 || p < 2 {
        return Err(invalid(format!("pipeline needs n >= 8 and p >= 2, got n={n}, p={p}")));
    }
    let tc = TuningConstants::with_form(cfg, n, p, opts.cn_form);
    let sp = data.split;
    let b = sp.b_n as f64;

    let screen = screen_with_threshold(data, tc.tau_n);

    let h2 = sp.fold(2);
    let (pi_lasso, lasso_report) = lasso(
        &select_rows(&data.w, h2.clone()),
        &select_entries(&data.z, h2),
        tc.lambda_pi,
        &opts.lasso,
    );

    let h4 = sp.fold(4);
    let w4 = select_rows(&data.w, h4.clone());
    let z4 = select_entries(&data.z, h4.clone());
    let y4 = select_entries(&data.y, h4);
    let sigma_w = w4.tr_mul(&w4) / b;

    let (direction, direction_report) = direction_solver(
        &sigma_w,
        &screen.xi_hat,
        tc.lambda_omega,
        tc.eta_omega,
        &opts.direction,
    );

    let mut fallback_used = false;
    let mut anchor = f64::NAN;
    let mut projected_report = SolveReport::default();
    let pi_breve = if !direction_report.is_feasible() {
        if !opts.fallback {
            return Err(Error::Infeasible {
                stage: "direction",
                report: Box::new(direction_report),
            });
        }
        fallback_used = true;
        pi_lasso.clone()
    } else {
        let lasso_resid = &z4 - &w4 * &pi_lasso;
        let proj = &w4 * &direction;
        anchor = screen.xi_hat.dot(&pi_lasso) + proj.dot(&lasso_resid) / b;
        let problem = ProjectedProblem {
            w: &w4,
            z: &z4,
            xi: &screen.xi_hat,
            anchor,
            eta: tc.eta_pi,
            lambda: tc.lambda_pi,
            m: cfg.m,
        };
        let (q, rep) = projected_l1(&problem, &opts.projected);
        projected_report = rep;
        if projected_report.is_feasible() {
            q
        } else if opts.fallback {
            fallback_used = true;
            pi_lasso.clone()
        } else {
            return Err(Error::Infeasible {
                stage: "projection",
                report: Box::new(projected_report),
            });
        }
    };

    let v_hat = &z4 - &w4 * &pi_breve;
    let denom = v_hat.norm_squared();
    if denom < 1e-12 {
        return Err(Error::Degenerate(format!("residual energy {denom:.3e} on the last fold")));
    }
    let beta_hat = v_hat.dot(&y4) / denom;
    let est = NuisanceEstimates {
        a_set: screen.set,
        xi_tilde: screen.xi_tilde,
        xi_hat_a: screen.xi_hat,
        pi_lasso,
        direction,
        anchor,
        pi_breve,
        v_hat,
        fallback_used,
        lasso_report,
        direction_report,
        projected_report,
    };
    Ok((est, beta_hat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub beta_hat: f64,
    pub c_n: f64,
    pub reject: bool,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl TestOutcome {
    pub fn decide(beta_hat: f64, c_n: f64, beta0: f64) -> Self {
        Self {
            beta_hat,
            c_n,
            reject: (beta_hat - beta0).abs() > c_n,
            ci_lower: beta_hat - c_n,
            ci_upper: beta_hat + c_n,
        }
    }

    pub fn covers(&self, beta: f64) -> bool {
        self.ci_lower <= beta && beta <= self.ci_upper
    }
}

pub fn test_beta(data: &Dataset, cfg: &SpaceConfig, beta0: f64) -> Result<TestOutcome> {
    test_beta_with(data, cfg, beta0, &PipelineOptions::default())
}

pub fn test_beta_with(
    data: &Dataset,
    cfg: &SpaceConfig,
    beta0: f64,
    opts: &PipelineOptions,
) -> Result<TestOutcome> {
    let (_, beta_hat) = fit_pipeline_with(data, cfg, opts)?;
    let tc = TuningConstants::with_form(cfg, data.n(), data.p(), opts.cn_form);
    Ok(TestOutcome::decide(beta_hat, tc.c_n, beta0))
}
