use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::{ExperimentConfig, Scenario};
use crate::datagen::{l_factor, prior_family, support_to_delta, LTheta, PriorFamily};
use crate::error::Result;
use crate::lowerbound::{
    bracket_check, chi2_mixture, chi2_pair, detection_bounds, hypergeo_sum, pair_determinant, qj_gram_closed,
    random_alternative, BracketCheck,
};
use crate::model::{build_sigma, decompose_sigma, in_theta_s, ModelTheta, SpaceConfig, SpaceVariant, Violation};
use crate::{linalg, par, rng};

pub type ClosedForm = fn(&[u8], &[u8], f64, f64, usize) -> f64;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub worst_residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn from_residuals(name: &str, residuals: &[f64], tolerance: f64) -> Self {
        let worst = residuals.iter().copied().fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
        Self {
            name: name.into(),
            passed: worst <= tolerance,
            cases: residuals.len(),
            worst_residual: worst,
            tolerance,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Random alternative and a family with a valid bracket, dimension `dim` and size `m`.
fn random_family<R: Rng>(space: &SpaceConfig, dim: usize, m: usize, rng: &mut R) -> (ModelTheta, PriorFamily) {
    let theta = random_alternative(space, dim + 1, m, rng);
    loop {
        let h = rng.random_range(0.0..0.5);
        if let Ok(fam) = PriorFamily::with_offset(&theta, m, h) {
            let coef = crate::lowerbound::closed_coefficient(h, fam.r, m);
            if 1.0 - coef * m as f64 > 0.05 {
                return (theta, fam);
            }
        }
    }
}

fn dense_pairs(fam: &PriorFamily) -> Vec<(Vec<u8>, LTheta)> {
    let dim = fam.dim();
    fam.supports().map(|s| (support_to_delta(dim, &s), fam.member_l(&s))).collect()
}

/// Dense pair determinant against a closed form over every support pair of small random families.
pub fn determinant_identity_check(closed: ClosedForm, cases: usize, seed: u64) -> Result<CheckResult> {
    let space = SpaceConfig::default();
    let per_case = par::map_indexed(cases, |c| -> Result<Vec<f64>> {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 1, c as u64));
        let dim = rng.random_range(2..=8usize);
        let m = rng.random_range(1..=dim.min(3));
        let (theta, fam) = random_family(&space, dim, m, &mut rng);
        let l0 = l_factor(&theta)?;
        let members = dense_pairs(&fam);
        let mut out = Vec::with_capacity(members.len() * members.len());
        for (d1, l1) in &members {
            for (d2, l2) in &members {
                let dense = pair_determinant(&l0, l1, l2)?;
                out.push(rel(dense, closed(d1, d2, fam.h, fam.r, fam.m)));
            }
        }
        Ok(out)
    });
    let residuals: Vec<f64> = per_case.into_iter().collect::<Result<Vec<_>>>()?.concat();
    Ok(CheckResult::from_residuals("determinant-identity", &residuals, 1e-9))
}

fn cov(l: &LTheta) -> DMatrix<f64> {
    &l.l * l.l.transpose()
}

fn inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| a.clone().try_inverse().expect("invertible"))
}

/// One-sample pair value against the Gaussian integral of p1 p2 / p0.
fn pair_integral_check(cases: usize, seed: u64) -> Result<CheckResult> {
    let space = SpaceConfig::default();
    let mut residuals = Vec::new();
    for c in 0..cases {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 2, c as u64));
        let dim = rng.random_range(2..=6usize);
        let m = rng.random_range(1..=dim.min(2));
        let (theta, fam) = random_family(&space, dim, m, &mut rng);
        let members = dense_pairs(&fam);
        let l0 = l_factor(&theta)?;
        let (s0, s1, s2) = (
            cov(&l0),
            cov(&members[0].1),
            cov(&members[members.len() - 1].1),
        );
        let mixed = inverse(&s1) + inverse(&s2) - inverse(&s0);
        let det = |a: &DMatrix<f64>| linalg::lu_determinant(a);
        let integral = (det(&s0) / (det(&s1) * det(&s2) * det(&mixed))).sqrt();
        let value = chi2_pair(&l0, &members[0].1, &members[members.len() - 1].1)?;
        residuals.push(rel(value, integral));
    }
    Ok(CheckResult::from_residuals("pair-integral", &residuals, 1e-9))
}

fn mixture_grouping_check(cases: usize, seed: u64) -> Result<CheckResult> {
    let space = SpaceConfig::default();
    let mut residuals = Vec::new();
    for c in 0..cases {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 3, c as u64));
        let dim = rng.random_range(2..=10usize);
        let m = rng.random_range(1..=2usize);
        let n = rng.random_range(1..=40usize);
        let theta = random_alternative(&space, dim + 1, m, &mut rng);
        let h = rng.random_range(0.0..0.05);
        let Ok(fam) = PriorFamily::with_offset(&theta, m, h) else { continue };
        let Ok(v) = chi2_mixture(&theta, &fam, n) else { continue };
        if let Some(b) = v.brute {
            residuals.push((v.grouped - b).abs() / v.grouped.abs().max(1.0));
        }
    }
    Ok(CheckResult::from_residuals("mixture-grouping", &residuals, 1e-9))
}

fn analytic_covariance(theta: &ModelTheta) -> DMatrix<f64> {
    let p = theta.p();
    let q = p - 1;
    let coef = theta.coefficients();
    let mut out = DMatrix::zeros(p + 1, p + 1);
    let perm: Vec<usize> = (1..p).chain(std::iter::once(0)).collect();
    for (a, &i) in perm.iter().enumerate() {
        for (b, &j) in perm.iter().enumerate() {
            out[(a, b)] = theta.sigma_cov[(i, j)];
        }
    }
    let sc = &theta.sigma_cov * &coef;
    for (a, &i) in perm.iter().enumerate() {
        out[(a, q + 1)] = sc[i];
        out[(q + 1, a)] = sc[i];
    }
    out[(q + 1, q + 1)] = coef.dot(&sc) + theta.sigma_noise * theta.sigma_noise;
    out
}

fn l_factor_check(cases: usize, seed: u64) -> Result<(CheckResult, CheckResult)> {
    let space = SpaceConfig::default();
    let mut cov_res = Vec::new();
    let mut block_res = Vec::new();
    for c in 0..cases {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 4, c as u64));
        let dim = rng.random_range(1..=9usize);
        let theta = random_alternative(&space, dim + 1, dim + 1, &mut rng);
        let l = l_factor(&theta)?;
        let target = analytic_covariance(&theta);
        cov_res.push((cov(&l) - &target).amax() / target.amax().max(1.0));
        let back = build_sigma(&decompose_sigma(&theta.sigma_cov)?)?;
        block_res.push((back - &theta.sigma_cov).amax() / theta.sigma_cov.amax().max(1.0));
    }
    Ok((
        CheckResult::from_residuals("l-factor-covariance", &cov_res, 1e-12),
        CheckResult::from_residuals("block-roundtrip", &block_res, 1e-12),
    ))
}

fn block_diagonal(l: &LTheta, copies: usize) -> LTheta {
    let k = l.l.nrows();
    let mut out = DMatrix::zeros(k * copies, k * copies);
    for c in 0..copies {
        out.view_mut((c * k, c * k), (k, k)).copy_from(&l.l);
    }
    LTheta { l: out }
}

/// The pair value for n stacked observations equals the one-sample value to the n.
fn product_structure_check(cases: usize, seed: u64) -> Result<CheckResult> {
    let space = SpaceConfig::default();
    let mut residuals = Vec::new();
    for c in 0..cases {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 5, c as u64));
        let dim = rng.random_range(2..=4usize);
        let (theta, fam) = random_family(&space, dim, 1, &mut rng);
        let n = rng.random_range(2..=4usize);
        let members = dense_pairs(&fam);
        let l0 = l_factor(&theta)?;
        let (a, b) = (&members[0].1, &members[members.len() - 1].1);
        let one = chi2_pair(&l0, a, b)?;
        let stacked = chi2_pair(&block_diagonal(&l0, n), &block_diagonal(a, n), &block_diagonal(b, n))?;
        residuals.push((stacked - one.powi(n as i32)).abs() / one.powi(n as i32));
    }
    Ok(CheckResult::from_residuals("product-structure", &residuals, 1e-9))
}

/// Sum over p in {1e2, 1e3, 1e4} at fixed (m, a, n) decreases toward one.
fn hypergeometric_limit_check() -> Result<CheckResult> {
    let values = [100usize, 1000, 10_000]
        .iter()
        .map(|&p| hypergeo_sum(2, p, 100, 0.1))
        .collect::<Result<Vec<_>>>()?;
    let ordered = values.windows(2).all(|w| w[1] < w[0]) && values.iter().all(|v| *v >= 1.0);
    let gap = values[2] - 1.0;
    Ok(CheckResult {
        name: "hypergeometric-limit".into(),
        passed: ordered,
        cases: values.len(),
        worst_residual: gap,
        tolerance: values[0] - 1.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipTrial {
    pub p: usize,
    pub n: usize,
    pub s: usize,
    pub m: usize,
    pub h: f64,
    pub members: usize,
    pub strict_failures: usize,
    pub proven_failures: usize,
    pub reasons: Vec<Violation>,
    pub bracket: BracketCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipBatch {
    pub trials: usize,
    /// Trials where every member lies in the shrunk null space.
    pub strict_pass: usize,
    /// Trials where every member satisfies the bands the construction guarantees.
    pub proven_pass: usize,
    pub members_checked: usize,
    pub bracket_flags: usize,
    pub failing: Vec<MembershipTrial>,
}

impl MembershipBatch {
    pub fn all_strict(&self) -> bool {
        self.strict_pass == self.trials
    }

    pub fn all_proven(&self) -> bool {
        self.proven_pass == self.trials
    }
}

fn random_space<R: Rng>(rng: &mut R) -> (SpaceConfig, usize) {
    loop {
        let c_exp = rng.random_range(0.3..0.49);
        let s = rng.random_range(2..=4usize);
        let p_min = ((s as f64).powf(1.0 / c_exp).ceil() as usize).max(s + 1);
        if p_min > 30 {
            continue;
        }
        let p = rng.random_range(p_min..=30);
        let zeta = rng.random_range(0.8..0.95);
        let m1 = rng.random_range(1.0..3.0);
        let space = SpaceConfig {
            m: rng.random_range(1.5..6.0),
            m1,
            m2: rng.random_range(1.0..3.0),
            alpha: 0.05,
            s,
            zeta,
            kappa: rng.random_range(0.2..0.5) * zeta * m1,
            c_exp,
        };
        if space.validate().is_ok() && (s as f64) <= (p as f64).powf(c_exp) {
            return (space, p);
        }
    }
}

pub fn null_membership_batch(trials: usize, seed: u64) -> Result<MembershipBatch> {
    let runs = par::map_indexed(trials, |t| -> Result<MembershipTrial> {
        let mut rng = rng::stream(rng::derive_seed(seed, Scenario::LowerboundVerify.id(), 6, t as u64));
        let (space, p) = random_space(&mut rng);
        let s = space.s;
        let log_p = (p as f64).ln();
        let n = (4.0 * s as f64 * log_p).ceil() as usize + rng.random_range(0..50usize);
        let bounds = detection_bounds(&space, n, p)?;
        let d = rng.random_range(0.0..=bounds.rho);
        let m = s / 2;
        let theta = random_alternative(&space, p, m, &mut rng);
        let fam = prior_family(&theta, &space, n, p, d)?;
        let beta0 = fam.beta0();
        let mut trial = MembershipTrial {
            p,
            n,
            s,
            m,
            h: fam.h,
            members: 0,
            strict_failures: 0,
            proven_failures: 0,
            reasons: Vec::new(),
            bracket: bracket_check(&fam, n, p, space.c_exp),
        };
        for (_, member) in fam.members() {
            trial.members += 1;
            let strict = in_theta_s(&member, &space, 2 * m, Some(beta0), SpaceVariant::Shrunk);
            let proven = in_theta_s(&member, &space, 2 * m, Some(beta0), SpaceVariant::CappedNoise);
            if !strict.holds() {
                trial.strict_failures += 1;
                for r in strict.reasons {
                    if !trial.reasons.contains(&r) {
                        trial.reasons.push(r);
                    }
                }
            }
            trial.proven_failures += usize::from(!proven.holds());
        }
        Ok(trial)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MembershipBatch {
        trials,
        strict_pass: runs.iter().filter(|t| t.strict_failures == 0).count(),
        proven_pass: runs.iter().filter(|t| t.proven_failures == 0).count(),
        members_checked: runs.iter().map(|t| t.members).sum(),
        bracket_flags: runs.iter().filter(|t| t.bracket.readings_disagree()).count(),
        failing: runs.into_iter().filter(|t| t.strict_failures + t.proven_failures > 0).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub membership: MembershipBatch,
    pub passed: bool,
    pub grid_note: &'static str,
}

pub fn run_lowerbound_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    run_lowerbound_verify_with(cfg, qj_gram_closed)
}

/// Full oracle suite with an injectable closed form for the determinant identity.
pub fn run_lowerbound_verify_with(cfg: &ExperimentConfig, closed: ClosedForm) -> Result<VerifyReport> {
    let seed = cfg.seed;
    let (l_check, block_check) = l_factor_check(50, seed)?;
    let mut checks = vec![
        determinant_identity_check(closed, 60, seed)?,
        pair_integral_check(100, seed)?,
        mixture_grouping_check(100, seed)?,
        l_check,
        block_check,
        product_structure_check(30, seed)?,
        hypergeometric_limit_check()?,
    ];
    let membership = null_membership_batch(cfg.reps, seed)?;
    checks.push(CheckResult {
        name: "null-membership".into(),
        passed: membership.all_strict(),
        cases: membership.trials,
        worst_residual: (membership.trials - membership.strict_pass) as f64,
        tolerance: 0.0,
    });
    checks.push(CheckResult {
        name: "null-membership-proven-bands".into(),
        passed: membership.all_proven(),
        cases: membership.trials,
        worst_residual: (membership.trials - membership.proven_pass) as f64,
        tolerance: 0.0,
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, membership, passed, grid_note: super::GRID_NOTE })
}

