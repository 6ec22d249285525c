#![allow(dead_code)]

use densetest::model::{ModelTheta, SigmaFactor};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Covariance of (W, Z, y) assembled from Sigma, the coefficients and the noise level.
pub fn joint_covariance(theta: &ModelTheta) -> DMatrix<f64> {
    let p = theta.p();
    let q = p - 1;
    let coef = theta.coefficients();
    let order: Vec<usize> = (1..p).chain([0]).collect();
    let mut out = DMatrix::zeros(p + 1, p + 1);
    for a in 0..p {
        for b in 0..p {
            out[(a, b)] = theta.sigma_cov[(order[a], order[b])];
        }
        let mut cov_y = 0.0;
        for k in 0..p {
            cov_y += theta.sigma_cov[(order[a], k)] * coef[k];
        }
        out[(a, q + 1)] = cov_y;
        out[(q + 1, a)] = cov_y;
    }
    let mut var_y = theta.sigma_noise * theta.sigma_noise;
    for i in 0..p {
        for j in 0..p {
            var_y += coef[i] * theta.sigma_cov[(i, j)] * coef[j];
        }
    }
    out[(q + 1, q + 1)] = var_y;
    out
}

/// det(I - (A1 - I)(A2 - I)) with A_j the covariances whitened by the reference.
pub fn dense_pair_determinant(s0: &DMatrix<f64>, s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> f64 {
    let l0 = s0.clone().cholesky().expect("reference covariance is SPD").l();
    let inv = l0.try_inverse().expect("invertible");
    let k = s0.nrows();
    let id = DMatrix::<f64>::identity(k, k);
    let a1 = &inv * s1 * inv.transpose() - &id;
    let a2 = &inv * s2 * inv.transpose() - &id;
    (id - a1 * a2).determinant()
}

pub fn gaussian_log_density(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("SPD covariance");
    let k = x.len() as f64;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&chol.solve(x)))
}

/// Unconstrained random parameter with the block structure.
pub fn random_theta<R: Rng>(rng: &mut R, p: usize) -> ModelTheta {
    let q = p - 1;
    let pi = DVector::from_fn(q, |_, _| 0.4 * rng.sample::<f64, _>(StandardNormal));
    let factor = SigmaFactor::new(pi, rng.random_range(0.3..2.0)).unwrap();
    let gamma = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
    ModelTheta::from_factor(rng.sample(StandardNormal), gamma, &factor, rng.random_range(0.1..2.0)).unwrap()
}
