use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::datagen::{binomial, Dataset, LTheta, PriorFamily};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelTheta, SpaceConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBounds {
    pub rho: f64,
    pub tau: f64,
    pub h_n_lower: f64,
    pub h_n_parametric: f64,
    pub h0: f64,
    pub rho_terms: [f64; 8],
}

pub fn rho_terms(cfg: &SpaceConfig) -> [f64; 8] {
    let (m, m1, m2) = (cfg.m, cfg.m1, cfg.m2);
    let (z, k, c) = (cfg.zeta, cfg.kappa, cfg.c_exp);
    let one_z2 = 1.0 - z * z;
    [
        4.0,
        (0.5 - c) / (15.0 * (m / (k * k) + 1.0)),
        2.0 * (1.0 / z - 1.0).powi(2) / (m.powi(3) * (2.0 * m + 1.0)),
        2.0 * m * (1.0 - z).powi(2) / (2.0 * m + 1.0),
        one_z2 * m2 / (8.0 * z * m.sqrt()),
        k * k * one_z2 * one_z2 * m2 * m2 / (64.0 * z.powi(4) * m * m1 * m1),
        m2 * one_z2.sqrt() / (2.0 * m.sqrt()),
        k * k * one_z2 * m2 * m2 / (4.0 * z * z * m1 * m1 * m),
    ]
}

pub fn detection_bounds(cfg: &SpaceConfig, n: usize, p: usize) -> Result<DetectionBounds> {
    let s = cfg.s as f64;
    let (nf, log_p) = (n as f64, (p as f64).ln());
    if n == 0 || p < 2 || s * log_p / nf > 0.25 {
        return Err(Error::InvalidRegime(format!(
            "need s*ln(p)/n <= 1/4, got {:.4}",
            s * log_p / nf
        )));
    }
    if cfg.s < 2 || s > (p as f64).powf(cfg.c_exp) {
        return Err(Error::InvalidRegime(format!(
            "need 2 <= s <= p^c = {:.3}, got s = {}",
            (p as f64).powf(cfg.c_exp),
            cfg.s
        )));
    }
    let terms = rho_terms(cfg);
    let rho = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let tau = cfg.kappa * ((1.0 + cfg.alpha * cfg.alpha).ln() / cfg.m).sqrt();
    Ok(DetectionBounds {
        rho,
        tau,
        h_n_lower: rho * s * log_p / nf,
        h_n_parametric: tau / nf.sqrt(),
        h0: rho.min(tau),
        rho_terms: terms,
    })
}

fn lower_inverse(l0: &LTheta) -> Result<DMatrix<f64>> {
    let k = l0.l.nrows();
    let scale = l0.l.amax().max(1.0);
    if (0..k).any(|i| l0.l[(i, i)].abs() <= 1e-14 * scale) {
        return Err(Error::Factorization("reference factor is singular".into()));
    }
    l0.l
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Factorization("triangular solve failed".into()))
}

/// det(I - (Q1 Q1' - I)(Q2 Q2' - I)) with Q_j = L0^{-1} L_j.
pub fn pair_determinant(l0: &LTheta, l1: &LTheta, l2: &LTheta) -> Result<f64> {
    let inv = lower_inverse(l0)?;
    let k = l0.l.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let q1 = &inv * &l1.l;
    let q2 = &inv * &l2.l;
    let a = &q1 * q1.transpose() - &id;
    let b = &q2 * q2.transpose() - &id;
    Ok((id - a * b).lu().determinant())
}

/// E_0[(dP1/dP0)(dP2/dP0)] for one observation.
pub fn chi2_pair(l0: &LTheta, l1: &LTheta, l2: &LTheta) -> Result<f64> {
    let det = pair_determinant(l0, l1, l2)?;
    if !(det > 0.0) {
        return Err(Error::Domain(format!("pair determinant {det:.3e} is not positive")));
    }
    Ok(1.0 / det.sqrt())
}

pub fn delta_overlap(delta1: &[u8], delta2: &[u8]) -> usize {
    delta1.iter().zip(delta2).filter(|(a, b)| **a == 1 && **b == 1).count()
}

pub fn closed_coefficient(h: f64, r: f64, m: usize) -> f64 {
    h * (r * r * (1.0 - h).powi(2) + 1.0) / m as f64
}

pub fn qj_gram_closed(delta1: &[u8], delta2: &[u8], h: f64, r: f64, m: usize) -> f64 {
    let k = delta_overlap(delta1, delta2) as f64;
    (1.0 - closed_coefficient(h, r, m) * k).powi(2)
}

fn hypergeometric_weight(dim: usize, m: usize, k: usize) -> f64 {
    binomial(m, k) * binomial(dim - m, m - k) / binomial(dim, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureValue {
    pub grouped: f64,
    pub brute: Option<f64>,
}

pub const BRUTE_PAIR_CAP: f64 = 1e6;

pub fn chi2_mixture(theta_star: &ModelTheta, family: &PriorFamily, n: usize) -> Result<MixtureValue> {
    let m = family.m;
    let dim = family.dim();
    let coef = closed_coefficient(family.h, family.r, m);
    if 1.0 - coef * m as f64 <= 0.0 {
        return Err(Error::Domain(format!(
            "bracket 1 - {coef:.4}*{m} is not positive"
        )));
    }
    let nf = n as i32;
    let grouped = (0..=m)
        .map(|k| (1.0 - coef * k as f64).powi(-nf) * hypergeometric_weight(dim, m, k))
        .sum::<f64>()
        - 1.0;
    let size = family.size();
    let brute = if size * size <= BRUTE_PAIR_CAP {
        let l_star = crate::datagen::l_factor(theta_star)?;
        let members: Vec<LTheta> = family.supports().map(|s| family.member_l(&s)).collect();
        let mut total = 0.0;
        for a in &members {
            for b in &members {
                total += chi2_pair(&l_star, a, b)?.powi(nf);
            }
        }
        Some(total / (size * size) - 1.0)
    } else {
        None
    };
    Ok(MixtureValue { grouped, brute })
}

pub fn hypergeo_sum(m: usize, p: usize, n: usize, a: f64) -> Result<f64> {
    if p < 2 || m > p - 1 {
        return Err(invalid(format!("need 0 <= m <= p-1, got m={m}, p={p}")));
    }
    let step = a * (p as f64).ln() / n as f64;
    let mut total = 0.0;
    for k in 0..=m {
        let bracket = 1.0 - k as f64 * step;
        if bracket <= 0.0 {
            return Err(Error::Domain(format!("bracket {bracket:.3e} at k={k}")));
        }
        total += bracket.powi(-(n as i32)) * hypergeometric_weight(p - 1, m, k);
    }
    Ok(total)
}

/// Ratio m^{-1} h [r^2(1-h)^2+1] / (n^{-1} ln p) against the two readings of the bracket bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketCheck {
    pub ratio: f64,
    pub proof_bound: f64,
    pub sum_bound: f64,
    pub meets_proof_bound: bool,
    pub meets_sum_bound: bool,
}

impl BracketCheck {
    pub fn readings_disagree(&self) -> bool {
        self.meets_proof_bound != self.meets_sum_bound
    }
}

pub fn bracket_check(family: &PriorFamily, n: usize, p: usize, c_exp: f64) -> BracketCheck {
    let coef = closed_coefficient(family.h, family.r, family.m);
    let ratio = coef / ((p as f64).ln() / n as f64);
    let proof_bound = (0.5 - c_exp) / 5.0;
    let sum_bound = (1.0 - 2.0 * c_exp) / 4.0;
    BracketCheck {
        ratio,
        proof_bound,
        sum_bound,
        meets_proof_bound: ratio <= proof_bound,
        meets_sum_bound: ratio < sum_bound,
    }
}

fn same_nuisance(a: &ModelTheta, b: &ModelTheta) -> bool {
    let tol = 1e-12;
    a.gamma.len() == b.gamma.len()
        && (&a.gamma - &b.gamma).amax() <= tol * a.gamma.amax().max(1.0)
        && (&a.sigma_cov - &b.sigma_cov).amax() <= tol * a.sigma_cov.amax().max(1.0)
        && (a.sigma_noise - b.sigma_noise).abs() <= tol * a.sigma_noise.max(1.0)
}

pub fn log_likelihood_ratio(theta_alt: &ModelTheta, theta_null: &ModelTheta, data: &Dataset) -> Result<f64> {
    if !same_nuisance(theta_alt, theta_null) {
        return Err(invalid("parameters must differ only in beta"));
    }
    if data.p() != theta_alt.p() {
        return Err(Error::DimensionMismatch("data and parameter dimensions differ".into()));
    }
    let sigma = theta_alt.sigma_noise;
    if !(sigma > 0.0) {
        return Err(Error::Domain("likelihood ratio needs positive noise".into()));
    }
    let beta0 = theta_null.beta;
    let h = theta_alt.beta - beta0;
    let fitted = &data.w * &theta_alt.gamma;
    let mut acc = 0.0;
    for i in 0..data.n() {
        let zi = data.z[i];
        acc += zi * (data.y[i] - zi * (beta0 + h / 2.0) - fitted[i]);
    }
    Ok(h / (sigma * sigma) * acc)
}

pub fn likelihood_ratio(theta_alt: &ModelTheta, theta_null: &ModelTheta, data: &Dataset) -> Result<f64> {
    log_likelihood_ratio(theta_alt, theta_null, data).map(f64::exp)
}

pub fn gaussian_kl(mu0: &DVector<f64>, s0: &DMatrix<f64>, mu1: &DVector<f64>, s1: &DMatrix<f64>) -> Result<f64> {
    let k = mu0.len();
    if mu1.len() != k || s0.shape() != (k, k) || s1.shape() != (k, k) {
        return Err(Error::DimensionMismatch("KL inputs have inconsistent sizes".into()));
    }
    let c0 = s0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("first covariance is not SPD".into()))?;
    let c1 = s1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("second covariance is not SPD".into()))?;
    let trace = c1.solve(s0).trace() - k as f64;
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let diff = mu1 - mu0;
    let maha = diff.dot(&c1.solve(&diff));
    Ok((0.5 * (trace + logdet(&c1) - logdet(&c0) + maha)).max(0.0))
}

pub fn bernstein_bound(n: usize, t: f64) -> f64 {
    2.0 * (-t * t / (2.0 * (2.0 * n as f64 + 7.0 * t))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub bound: f64,
    pub frequency: f64,
    pub std_error: f64,
}

impl TailRow {
    pub fn within_bound(&self) -> bool {
        self.frequency <= self.bound + 3.0 * self.std_error
    }
}

const SHARD: usize = 1000;

/// Exceedance frequency of |sum(r1 r2 - rho)| >= t for correlated standard normal pairs.
pub fn bernstein_tail_check(n: usize, rho_corr: f64, t_grid: &[f64], reps: usize, seed: u64) -> Result<Vec<TailRow>> {
    if !(-1.0..=1.0).contains(&rho_corr) {
        return Err(invalid(format!("correlation must lie in [-1,1], got {rho_corr}")));
    }
    let shards = reps.div_ceil(SHARD);
    let counts: Vec<Vec<usize>> = crate::par::map_indexed(shards, |shard| {
        let mut rng = rng::stream(rng::derive_seed(seed, 0xB3, n as u64, shard as u64));
        let len = SHARD.min(reps - shard * SHARD);
        let comp = (1.0 - rho_corr * rho_corr).max(0.0).sqrt();
        let mut hits = vec![0usize; t_grid.len()];
        for _ in 0..len {
            let mut sum = 0.0;
            for _ in 0..n {
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                let r2 = rho_corr * g1 + comp * g2;
                sum += g1 * r2 - rho_corr;
            }
            for (h, &t) in hits.iter_mut().zip(t_grid) {
                if sum.abs() >= t {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut rows = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let hits: usize = counts.iter().map(|c| c[j]).sum();
        let freq = hits as f64 / reps as f64;
        rows.push(TailRow {
            t,
            bound: bernstein_bound(n, t),
            frequency: freq,
            std_error: (freq * (1.0 - freq) / reps as f64).sqrt(),
        });
    }
    Ok(rows)
}

fn project_l1_ball(v: &mut [f64], radius: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in mags.iter().enumerate() {
        cum += u;
        let cand = (cum - radius) / (i + 1) as f64;
        if u > cand {
            theta = cand;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Cone ratio q'Gq / ||q_J||^2 at a feasible point; None when q_J vanishes.
fn cone_ratio(g: &DMatrix<f64>, q: &DVector<f64>, support: &[usize]) -> Option<f64> {
    let nj: f64 = support.iter().map(|&j| q[j] * q[j]).sum();
    (nj > 0.0).then(|| q.dot(&(g * q)) / nj)
}

fn descend(g: &DMatrix<f64>, support: &[usize], mut q: DVector<f64>, steps: usize) -> f64 {
    let dim = q.len();
    let in_j: Vec<bool> = (0..dim).map(|j| support.contains(&j)).collect();
    let lip = g.diagonal().sum().max(1e-12);
    let normalize = |q: &mut DVector<f64>| {
        let nj: f64 = support.iter().map(|&j| q[j] * q[j]).sum::<f64>().sqrt();
        if nj > 0.0 {
            *q /= nj;
        }
        let radius = 3.0 * support.iter().map(|&j| q[j].abs()).sum::<f64>();
        let mut rest: Vec<f64> = (0..dim).filter(|&j| !in_j[j]).map(|j| q[j]).collect();
        project_l1_ball(&mut rest, radius);
        let mut it = rest.into_iter();
        for j in 0..dim {
            if !in_j[j] {
                q[j] = it.next().unwrap_or(0.0);
            }
        }
    };
    normalize(&mut q);
    let mut best = cone_ratio(g, &q, support).unwrap_or(f64::INFINITY);
    for _ in 0..steps {
        let grad = g * &q * 2.0;
        let mut next = &q - grad / (2.0 * lip);
        normalize(&mut next);
        match cone_ratio(g, &next, support) {
            Some(v) if v.is_finite() => {
                if v < best {
                    best = v;
                }
                q = next;
            }
            _ => break,
        }
    }
    best
}

/// Upper estimate of the restricted eigenvalue constant over sampled supports and cone directions.
pub fn re_constant_estimate(w: &DMatrix<f64>, s: usize, trials: usize, seed: u64) -> Result<f64> {
    let (b, dim) = w.shape();
    if trials == 0 || s == 0 || dim == 0 {
        return Err(invalid("need trials >= 1, s >= 1 and at least one column"));
    }
    let s = s.min(dim);
    let g = w.tr_mul(w) / b as f64;
    let mut rng = rng::stream(seed);
    let mut best = f64::INFINITY;
    for t in 0..trials {
        let mut support = sample(&mut rng, dim, s).into_vec();
        support.sort_unstable();
        let sub = DMatrix::from_fn(s, s, |i, j| g[(support[i], support[j])]);
        let eig = sub.symmetric_eigen();
        let imin = eig.eigenvalues.imin();
        let mut q = DVector::zeros(dim);
        for (k, &j) in support.iter().enumerate() {
            q[j] = eig.eigenvectors[(k, imin)];
        }
        if t % 2 == 1 {
            let spread = Uniform::new(0.0, 1.0).expect("valid range");
            let mix: f64 = rng.sample(spread);
            for j in 0..dim {
                let e: f64 = rng.sample(StandardNormal);
                q[j] += mix * e;
            }
        }
        best = best.min(descend(&g, &support, q, 200));
    }
    Ok(best)
}

/// Random alternative in the shrunk space with precision-row sparsity at most m.
pub fn random_alternative<R: Rng>(cfg: &SpaceConfig, p: usize, m: usize, rng: &mut R) -> ModelTheta {
    let dim = p - 1;
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    loop {
        let mut pi = DVector::zeros(dim);
        let nnz = if m > 1 { rng.random_range(0..m) } else { 0 };
        for j in sample(rng, dim, nnz.min(dim)).into_iter() {
            let e: f64 = rng.sample(StandardNormal);
            pi[j] = e * 0.5;
        }
        let sigma_v = 0.3 + rng.sample(unit) * 1.5;
        let Ok(factor) = crate::model::SigmaFactor::new(pi, sigma_v) else {
            continue;
        };
        let sigma_noise = cfg.kappa + rng.sample(unit) * (cfg.zeta * cfg.m1 - cfg.kappa);
        let mut coef = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        let radius = cfg.zeta * cfg.m2 * rng.sample(unit);
        coef *= radius / coef.norm();
        let gamma = coef.rows(1, dim).into_owned();
        let Ok(theta) = ModelTheta::from_factor(coef[0], gamma, &factor, sigma_noise) else {
            continue;
        };
        let member = crate::model::in_theta_s(&theta, cfg, m, None, crate::model::SpaceVariant::Shrunk);
        if member.holds() {
            return theta;
        }
    }
}
