mod common;

use common::{dense_pair_determinant, joint_covariance};
use densetest::datagen::{support_to_delta, LTheta, PriorFamily};
use densetest::lowerbound::{
    bernstein_bound, bernstein_tail_check, chi2_mixture, chi2_pair, detection_bounds, gaussian_kl, hypergeo_sum,
    likelihood_ratio, qj_gram_closed, re_constant_estimate,
};
use densetest::datagen::sample_dataset;
use densetest::model::{ModelTheta, SigmaFactor, SpaceConfig};
use densetest::{rng, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn scalar(sd: f64) -> LTheta {
    LTheta { l: DMatrix::from_element(1, 1, sd) }
}

fn normal_log_pdf(x: f64, var: f64) -> f64 {
    -x * x / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Simpson rule for g1 g2 / g0 over a wide grid.
fn integrate_pair(v0: f64, v1: f64, v2: f64) -> f64 {
    let (lo, hi, steps) = (-60.0, 60.0, 200_000usize);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| (normal_log_pdf(x, v1) + normal_log_pdf(x, v2) - normal_log_pdf(x, v0)).exp();
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn one_dimensional_pair_matches_integration() {
    for (v1, v2, expect) in [(1.1, 1.2, 1.010_153), (1.1, 1.1, 1.005_038)] {
        let numeric = integrate_pair(1.0, v1, v2);
        let closed = chi2_pair(&scalar(1.0), &scalar(v1.sqrt()), &scalar(v2.sqrt())).unwrap();
        assert!((closed - numeric).abs() < 1e-9, "{closed} vs {numeric}");
        assert!((closed - expect).abs() < 1e-6);
    }
    assert_eq!(chi2_pair(&scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap(), 1.0);
    assert!(matches!(chi2_pair(&scalar(0.0), &scalar(1.0), &scalar(1.0)), Err(Error::Factorization(_))));
}

fn zero_pi_alternative(dim: usize, sigma_v: f64, noise: f64) -> ModelTheta {
    let f = SigmaFactor::new(DVector::zeros(dim), sigma_v).unwrap();
    ModelTheta::from_factor(0.5, DVector::from_element(dim, 0.1), &f, noise).unwrap()
}

#[test]
fn closed_form_matches_dense_small_example() {
    let theta = zero_pi_alternative(4, 1.0, 0.5);
    let fam = PriorFamily::with_offset(&theta, 1, 0.1).unwrap();
    assert!((fam.r - 2.0).abs() < 1e-15);
    let s0 = joint_covariance(&theta);
    for j in 0..4 {
        let s = joint_covariance(&fam.member(&[j]));
        let dense = dense_pair_determinant(&s0, &s, &s);
        let closed = qj_gram_closed(&support_to_delta(4, &[j]), &support_to_delta(4, &[j]), 0.1, 2.0, 1);
        assert!((dense - closed).abs() < 1e-10);
    }
    let d = support_to_delta(4, &[0]);
    assert_eq!(qj_gram_closed(&d, &support_to_delta(4, &[1]), 0.1, 2.0, 1), 1.0);
    assert_eq!(qj_gram_closed(&d, &d, 0.0, 2.0, 1), 1.0);
}

#[test]
fn mixture_grouped_matches_brute_and_decreases_in_dimension() {
    let theta = zero_pi_alternative(6, 0.9, 0.8);
    let fam = PriorFamily::with_offset(&theta, 1, 0.05).unwrap();
    let v = chi2_mixture(&theta, &fam, 20).unwrap();
    assert!((v.grouped - v.brute.unwrap()).abs() < 1e-10);
    let zero = PriorFamily::with_offset(&theta, 1, 0.0).unwrap();
    assert!(chi2_mixture(&theta, &zero, 20).unwrap().grouped.abs() < 1e-15);

    let values: Vec<f64> = (10..=16)
        .step_by(2)
        .map(|dim| {
            let t = zero_pi_alternative(dim, 0.9, 0.8);
            let f = PriorFamily::with_offset(&t, 2, 0.02).unwrap();
            chi2_mixture(&t, &f, 30).unwrap().grouped
        })
        .collect();
    assert!(values.iter().all(|v| *v > 0.0));
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn hypergeometric_sum_examples() {
    assert!((hypergeo_sum(2, 50, 100, 0.0).unwrap() - 1.0).abs() < 1e-14);
    let hand = 0.5 + 0.5 * (1.0 - 0.1 * 3f64.ln() / 100.0).powi(-100);
    assert!((hypergeo_sum(1, 3, 100, 0.1).unwrap() - hand).abs() < 1e-14);
    assert!(matches!(hypergeo_sum(2, 10, 1, 1.0), Err(Error::Domain(_))));
}

#[test]
fn likelihood_ratio_edge_cases() {
    let f = SigmaFactor::new(DVector::from_vec(vec![0.2, 0.0]), 0.9).unwrap();
    let null = ModelTheta::from_factor(0.3, DVector::from_vec(vec![0.1, -0.2]), &f, 0.7).unwrap();
    let data = sample_dataset(&null, 5, 1).unwrap();
    assert_eq!(likelihood_ratio(&null, &null, &data).unwrap(), 1.0);
    let mut quiet = null.clone();
    quiet.sigma_noise = 0.0;
    let mut alt = quiet.clone();
    alt.beta = 0.5;
    assert!(matches!(likelihood_ratio(&alt, &quiet, &data), Err(Error::Domain(_))));
    let mut other = null.clone();
    other.gamma[0] = 1.0;
    assert!(likelihood_ratio(&other, &null, &data).is_err());
}

#[test]
fn kl_examples_and_monte_carlo() {
    let one = DMatrix::identity(1, 1);
    let kl = gaussian_kl(&DVector::zeros(1), &one, &DVector::from_element(1, 1.0), &one).unwrap();
    assert!((kl - 0.5).abs() < 1e-15);

    let mu0 = DVector::from_vec(vec![0.1, -0.2, 0.3]);
    let mu1 = DVector::from_vec(vec![0.0, 0.2, 0.1]);
    let s0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.2, -0.2, 0.1, -0.2, 0.8]);
    let s1 = DMatrix::from_row_slice(3, 3, &[1.1, 0.1, 0.0, 0.1, 0.9, 0.1, 0.0, 0.1, 1.0]);
    let exact = gaussian_kl(&mu0, &s0, &mu1, &s1).unwrap();
    let l0 = s0.clone().cholesky().unwrap().l();
    let log_density = |x: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>| {
        let c = s.clone().cholesky().unwrap();
        let d = x - mu;
        -0.5 * (d.dot(&c.solve(&d)) + 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let mut r = rng::stream(99);
    let draws = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let g = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
        let x = &mu0 + &l0 * g;
        let v = log_density(&x, &mu0, &s0) - log_density(&x, &mu1, &s1);
        sum += v;
        sq += v * v;
    }
    let mean = sum / draws as f64;
    let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn detection_terms_by_hand() {
    let cfg = SpaceConfig::default();
    let (m, m1, m2, z, k, c) = (4.0f64, 2.0f64, 2.0f64, 0.9f64, 0.5f64, 0.4f64);
    let terms = [
        4.0,
        (0.5 - c) / 15.0 / (m / k / k + 1.0),
        2.0 * (1.0 / z - 1.0) * (1.0 / z - 1.0) / (m * m * m * (2.0 * m + 1.0)),
        2.0 * m * (1.0 - z) * (1.0 - z) / (2.0 * m + 1.0),
        (1.0 - z * z) * m2 / (8.0 * z * m.sqrt()),
        k * k * (1.0 - z * z) * (1.0 - z * z) * m2 * m2 / (64.0 * z * z * z * z * m * m1 * m1),
        m2 * (1.0 - z * z).sqrt() / (2.0 * m.sqrt()),
        k * k * (1.0 - z * z) * m2 * m2 / (4.0 * z * z * m1 * m1 * m),
    ];
    let rho = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let b = detection_bounds(&cfg, 1000, 100).unwrap();
    assert!((b.rho - rho).abs() <= 1e-15 * rho);
    assert!(b.rho > 0.0 && b.tau > 0.0 && b.h0 == b.rho.min(b.tau));
    assert!((b.h_n_lower - rho * 2.0 * 100f64.ln() / 1000.0).abs() < 1e-15);
}

#[test]
fn bernstein_examples() {
    assert_eq!(bernstein_bound(100, 0.0), 2.0);
    for rho in [0.0, 1.0] {
        let rows = bernstein_tail_check(100, rho, &[0.0, 20.0, 50.0], 20_000, 4).unwrap();
        assert!(rows.iter().all(|r| r.within_bound()), "{rows:?}");
    }
    assert!(bernstein_tail_check(10, 1.5, &[1.0], 10, 0).is_err());
}

#[test]
fn restricted_eigenvalue_examples() {
    let b = 400;
    let mut w = DMatrix::zeros(b, 4);
    for i in 0..b {
        w[(i, i % 4)] = 2.0;
    }
    let iso = re_constant_estimate(&w, 2, 10, 1).unwrap();
    assert!((iso - 1.0).abs() < 0.05, "{iso}");

    let floor = 0.24 * 0.25f64.powi(2) / 4.0;
    let hits = (0..100u64)
        .filter(|&seed| {
            let mut r = rng::stream(seed);
            let g = DMatrix::from_fn(b, 50, |_, _| r.sample::<f64, _>(StandardNormal));
            re_constant_estimate(&g, 3, 5, seed).unwrap() >= floor
        })
        .count();
    assert!(hits >= 95, "{hits}");

    let mut r = rng::stream(3);
    let thin = DMatrix::from_fn(2, 10, |_, _| r.sample::<f64, _>(StandardNormal));
    assert!(re_constant_estimate(&thin, 3, 10, 3).unwrap() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_pair_is_at_least_one(seed in any::<u64>(), dim in 1usize..6, h in 0.0f64..0.4) {
        let mut r = rng::stream(seed);
        let pi = DVector::from_fn(dim, |_, _| 0.3 * r.sample::<f64, _>(StandardNormal));
        let f = SigmaFactor::new(pi, r.random_range(0.5..1.5)).unwrap();
        let theta = ModelTheta::from_factor(0.2, DVector::from_element(dim, 0.1), &f, r.random_range(0.5..1.5)).unwrap();
        let Ok(fam) = PriorFamily::with_offset(&theta, 1, h) else { return Ok(()); };
        let l0 = densetest::datagen::l_factor(&theta).unwrap();
        let l1 = fam.member_l(&[0]);
        if let Ok(v) = chi2_pair(&l0, &l1, &l1) {
            prop_assert!(v >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_diagonal(seed in any::<u64>(), k in 1usize..5) {
        let mut r = rng::stream(seed);
        let spd = |r: &mut rand_chacha::ChaCha8Rng| {
            let a = DMatrix::from_fn(k, k, |_, _| r.sample::<f64, _>(StandardNormal));
            &a * a.transpose() + DMatrix::identity(k, k) * 0.5
        };
        let (s0, s1) = (spd(&mut r), spd(&mut r));
        let mu0 = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
        let mu1 = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
        prop_assert!(gaussian_kl(&mu0, &s0, &mu1, &s1).unwrap() >= 0.0);
        prop_assert!(gaussian_kl(&mu0, &s0, &mu0, &s0).unwrap().abs() < 1e-12);
    }
}
