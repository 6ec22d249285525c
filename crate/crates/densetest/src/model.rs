use std::ops::{Range, RangeInclusive};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

pub const BOUNDARY_TOL: f64 = 1e-10;
pub const NONZERO_TOL: f64 = 1e-10;
const BETA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub alpha: f64,
    pub s: usize,
    pub zeta: f64,
    pub kappa: f64,
    pub c_exp: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            m: 4.0,
            m1: 2.0,
            m2: 2.0,
            alpha: 0.05,
            s: 2,
            zeta: 0.9,
            kappa: 0.5,
            c_exp: 0.4,
        }
    }
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.m > 1.0, "M must exceed 1"),
            (self.m1 >= 0.0, "M1 must be non-negative"),
            (self.m2 > 0.0, "M2 must be positive"),
            (self.alpha > 0.0 && self.alpha < 1.0, "alpha must lie in (0,1)"),
            (self.s >= 1, "s must be positive"),
            (
                self.zeta > 1.0 / self.m && self.zeta < 1.0,
                "zeta must lie in (1/M, 1)",
            ),
            (
                self.kappa > 0.0 && self.kappa <= self.zeta * self.m1,
                "kappa must lie in (0, zeta*M1]",
            ),
            (
                self.c_exp > 0.0 && self.c_exp < 0.5,
                "c_exp must lie in (0, 1/2)",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// Caps M1 and M2 multiplied by `factor`, everything else kept.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            m1: self.m1 * factor,
            m2: self.m2 * factor,
            kappa: self.kappa * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTheta {
    pub beta: f64,
    #[serde(with = "crate::serde_na::vector")]
    pub gamma: DVector<f64>,
    #[serde(with = "crate::serde_na::matrix")]
    pub sigma_cov: DMatrix<f64>,
    pub sigma_noise: f64,
}

impl ModelTheta {
    pub fn new(
        beta: f64,
        gamma: DVector<f64>,
        sigma_cov: DMatrix<f64>,
        sigma_noise: f64,
    ) -> Result<Self> {
        let p = sigma_cov.nrows();
        if sigma_cov.ncols() != p {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        if gamma.len() + 1 != p {
            return Err(Error::DimensionMismatch(format!(
                "gamma has length {} but covariance is {p}x{p}",
                gamma.len()
            )));
        }
        if sigma_noise < 0.0 {
            return Err(invalid("noise level must be non-negative"));
        }
        if linalg::max_asymmetry(&sigma_cov) > 1e-12 * sigma_cov.amax().max(1.0) {
            return Err(Error::InvalidStructure("covariance is not symmetric".into()));
        }
        Ok(Self {
            beta,
            gamma,
            sigma_cov,
            sigma_noise,
        })
    }

    pub fn from_factor(
        beta: f64,
        gamma: DVector<f64>,
        factor: &SigmaFactor,
        sigma_noise: f64,
    ) -> Result<Self> {
        Self::new(beta, gamma, build_sigma(factor)?, sigma_noise)
    }

    pub fn p(&self) -> usize {
        self.sigma_cov.nrows()
    }

    /// Full coefficient vector (beta, gamma).
    pub fn coefficients(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.p());
        c[0] = self.beta;
        c.rows_mut(1, self.gamma.len()).copy_from(&self.gamma);
        c
    }

    pub fn coefficient_norm(&self) -> f64 {
        (self.beta * self.beta + self.gamma.norm_squared()).sqrt()
    }

    pub fn response_variance(&self) -> f64 {
        let c = self.coefficients();
        c.dot(&(&self.sigma_cov * &c)) + self.sigma_noise * self.sigma_noise
    }

    pub fn factor(&self) -> Result<SigmaFactor> {
        decompose_sigma(&self.sigma_cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFactor {
    #[serde(with = "crate::serde_na::vector")]
    pub pi: DVector<f64>,
    pub sigma_v: f64,
}

impl SigmaFactor {
    pub fn new(pi: DVector<f64>, sigma_v: f64) -> Result<Self> {
        if !(sigma_v > 0.0) {
            return Err(invalid(format!("sigma_v must be positive, got {sigma_v}")));
        }
        Ok(Self { pi, sigma_v })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    #[serde(with = "crate::serde_na::vector")]
    pub omega_row: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub b_n: usize,
}

impl SplitPlan {
    /// Zero-based index range of fold `k` in 1..=4.
    pub fn fold(&self, k: usize) -> Range<usize> {
        assert!((1..=4).contains(&k), "fold index must be in 1..=4");
        (k - 1) * self.b_n..k * self.b_n
    }

    /// One-based index set H_k.
    pub fn fold_one_based(&self, k: usize) -> RangeInclusive<usize> {
        let r = self.fold(k);
        r.start + 1..=r.end
    }

    pub fn unused(&self) -> Range<usize> {
        4 * self.b_n..self.n
    }
}

pub fn split_plan(n: usize) -> Result<SplitPlan> {
    if n < 4 {
        return Err(invalid(format!("split needs n >= 4, got {n}")));
    }
    Ok(SplitPlan { n, b_n: n / 4 })
}

pub fn build_sigma(factor: &SigmaFactor) -> Result<DMatrix<f64>> {
    if !(factor.sigma_v > 0.0) {
        return Err(invalid("sigma_v must be positive"));
    }
    let q = factor.pi.len();
    let mut s = DMatrix::identity(q + 1, q + 1);
    s[(0, 0)] = factor.pi.norm_squared() + factor.sigma_v * factor.sigma_v;
    for j in 0..q {
        s[(0, j + 1)] = factor.pi[j];
        s[(j + 1, 0)] = factor.pi[j];
    }
    Ok(s)
}

pub fn decompose_sigma(sigma: &DMatrix<f64>) -> Result<SigmaFactor> {
    let p = sigma.nrows();
    if p == 0 || sigma.ncols() != p {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let worst = block_identity_gap(sigma);
    if worst > BOUNDARY_TOL {
        return Err(Error::InvalidStructure(format!(
            "lower-right block differs from identity by {worst:.3e}"
        )));
    }
    let pi = sigma.view((1, 0), (p - 1, 1)).column(0).into_owned();
    let resid = sigma[(0, 0)] - pi.norm_squared();
    if !(resid > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "Schur complement {resid:.3e} is not positive"
        )));
    }
    Ok(SigmaFactor {
        pi,
        sigma_v: resid.sqrt(),
    })
}

fn block_identity_gap(sigma: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows();
    let mut worst = 0.0_f64;
    for i in 1..p {
        for j in 1..p {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((sigma[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn precision_first_row(factor: &SigmaFactor) -> Result<PrecisionRow> {
    if !(factor.sigma_v > 0.0) {
        return Err(invalid("sigma_v must be positive"));
    }
    let v2 = factor.sigma_v * factor.sigma_v;
    let q = factor.pi.len();
    let mut row = DVector::zeros(q + 1);
    row[0] = 1.0 / v2;
    for j in 0..q {
        row[j + 1] = -factor.pi[j] / v2;
    }
    Ok(PrecisionRow { omega_row: row })
}

/// First row of the inverse of a general SPD covariance.
pub fn precision_row_general(sigma: &DMatrix<f64>) -> Result<PrecisionRow> {
    let ch = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky failed".into()))?;
    let mut e1 = DVector::zeros(sigma.nrows());
    e1[0] = 1.0;
    Ok(PrecisionRow {
        omega_row: ch.solve(&e1),
    })
}

pub fn scale_theta(theta: &ModelTheta, q: f64) -> Result<ModelTheta> {
    if !(q > 0.0) {
        return Err(invalid(format!("scale must be positive, got {q}")));
    }
    Ok(ModelTheta {
        beta: theta.beta * q,
        gamma: &theta.gamma * q,
        sigma_cov: theta.sigma_cov.clone(),
        sigma_noise: theta.sigma_noise * q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    NotPositiveDefinite,
    EigenBelow,
    EigenAbove,
    NoiseBelow,
    NoiseAbove,
    NormAbove,
    BlockNotIdentity,
    SparsityExceeded,
    BetaMismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub reasons: Vec<Violation>,
}

impl Membership {
    pub fn holds(&self) -> bool {
        self.reasons.is_empty()
    }

    fn require(&mut self, ok: bool, v: Violation) {
        if !ok {
            self.reasons.push(v);
        }
    }
}

/// Which constant band a membership check uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceVariant {
    /// Eigenvalues in [1/M, M], noise in [0, M1], norm at most M2.
    Standard,
    /// Eigenvalues in [1/(zeta M), zeta M], noise in [kappa, zeta M1], norm at most zeta M2.
    Shrunk,
    /// Eigenvalues in [1/M, M], noise in [0, zeta M1], norm at most zeta M2.
    CappedNoise,
}

struct Band {
    eig_lo: f64,
    eig_hi: f64,
    noise_lo: f64,
    noise_hi: f64,
    norm_hi: f64,
}

impl SpaceVariant {
    fn band(self, cfg: &SpaceConfig) -> Band {
        match self {
            SpaceVariant::Standard => Band {
                eig_lo: 1.0 / cfg.m,
                eig_hi: cfg.m,
                noise_lo: 0.0,
                noise_hi: cfg.m1,
                norm_hi: cfg.m2,
            },
            SpaceVariant::Shrunk => Band {
                eig_lo: 1.0 / (cfg.zeta * cfg.m),
                eig_hi: cfg.zeta * cfg.m,
                noise_lo: cfg.kappa,
                noise_hi: cfg.zeta * cfg.m1,
                norm_hi: cfg.zeta * cfg.m2,
            },
            SpaceVariant::CappedNoise => Band {
                eig_lo: 1.0 / cfg.m,
                eig_hi: cfg.m,
                noise_lo: 0.0,
                noise_hi: cfg.zeta * cfg.m1,
                norm_hi: cfg.zeta * cfg.m2,
            },
        }
    }
}

fn check_band(theta: &ModelTheta, band: &Band, out: &mut Membership) {
    let (lo, hi) = linalg::eigen_extremes(&theta.sigma_cov);
    out.require(lo > 0.0, Violation::NotPositiveDefinite);
    out.require(lo >= band.eig_lo - BOUNDARY_TOL, Violation::EigenBelow);
    out.require(hi <= band.eig_hi + BOUNDARY_TOL, Violation::EigenAbove);
    out.require(
        theta.sigma_noise >= band.noise_lo - BOUNDARY_TOL,
        Violation::NoiseBelow,
    );
    out.require(
        theta.sigma_noise <= band.noise_hi + BOUNDARY_TOL,
        Violation::NoiseAbove,
    );
    out.require(
        theta.coefficient_norm() <= band.norm_hi + BOUNDARY_TOL,
        Violation::NormAbove,
    );
}

pub fn in_theta_tilde(theta: &ModelTheta, cfg: &SpaceConfig) -> Membership {
    let mut out = Membership::default();
    check_band(theta, &SpaceVariant::Standard.band(cfg), &mut out);
    out
}

pub fn precision_row_sparsity(theta: &ModelTheta) -> Option<usize> {
    let row = match decompose_sigma(&theta.sigma_cov) {
        Ok(f) => precision_first_row(&f).ok()?,
        Err(_) => precision_row_general(&theta.sigma_cov).ok()?,
    };
    Some(
        row.omega_row
            .iter()
            .filter(|v| v.abs() > NONZERO_TOL)
            .count(),
    )
}

pub fn in_theta_s(
    theta: &ModelTheta,
    cfg: &SpaceConfig,
    s0: usize,
    beta0: Option<f64>,
    variant: SpaceVariant,
) -> Membership {
    let mut out = Membership::default();
    check_band(theta, &variant.band(cfg), &mut out);
    out.require(
        block_identity_gap(&theta.sigma_cov) <= BOUNDARY_TOL,
        Violation::BlockNotIdentity,
    );
    match precision_row_sparsity(theta) {
        Some(nnz) => out.require(nnz <= s0, Violation::SparsityExceeded),
        None => {
            if !out.reasons.contains(&Violation::NotPositiveDefinite) {
                out.reasons.push(Violation::NotPositiveDefinite);
            }
        }
    }
    if let Some(b0) = beta0 {
        out.require(
            (theta.beta - b0).abs() <= BETA_TOL * b0.abs().max(1.0),
            Violation::BetaMismatch,
        );
    }
    out
}
