use densetest::model::{
    build_sigma, decompose_sigma, in_theta_s, in_theta_tilde, precision_first_row, ModelTheta, SigmaFactor,
    SpaceConfig, SpaceVariant,
};
use densetest::linalg::eigen_extremes;
use nalgebra::DVector;
use proptest::prelude::*;

fn factor_strategy() -> impl Strategy<Value = SigmaFactor> {
    (1usize..8)
        .prop_flat_map(|q| (prop::collection::vec(-2.0f64..2.0, q), 0.05f64..3.0))
        .prop_map(|(pi, sv)| SigmaFactor::new(DVector::from_vec(pi), sv).unwrap())
}

proptest! {
    #[test]
    fn precision_row_inverts_first_column(f in factor_strategy()) {
        let sigma = build_sigma(&f).unwrap();
        let row = precision_first_row(&f).unwrap();
        let e = &sigma * &row.omega_row;
        for (i, v) in e.iter().enumerate() {
            let target = if i == 0 { 1.0 } else { 0.0 };
            prop_assert!((v - target).abs() <= 1e-8, "entry {i}: {v}");
        }
    }

    #[test]
    fn decompose_inverts_build(f in factor_strategy()) {
        let back = decompose_sigma(&build_sigma(&f).unwrap()).unwrap();
        prop_assert!((&back.pi - &f.pi).amax() <= 1e-10);
        prop_assert!((back.sigma_v - f.sigma_v).abs() <= 1e-10);
    }

    #[test]
    fn membership_monotone_in_sparsity(
        f in factor_strategy(),
        beta in -1.0f64..1.0,
        noise in 0.0f64..2.0,
        s0 in 0usize..8,
    ) {
        let q = f.pi.len();
        let theta = ModelTheta::from_factor(beta, DVector::from_element(q, 0.1), &f, noise).unwrap();
        let cfg = SpaceConfig { m: 10.0, m1: 3.0, m2: 3.0, ..SpaceConfig::default() };
        for variant in [SpaceVariant::Standard, SpaceVariant::Shrunk, SpaceVariant::CappedNoise] {
            if in_theta_s(&theta, &cfg, s0, None, variant).holds() {
                prop_assert!(in_theta_s(&theta, &cfg, s0 + 1, None, variant).holds());
            }
        }
    }

    #[test]
    fn response_variance_dominates_eigen_norm(
        f in factor_strategy(),
        beta in -1.0f64..1.0,
        noise in 0.0f64..2.0,
        g in prop::collection::vec(-0.5f64..0.5, 8),
    ) {
        let q = f.pi.len();
        let theta = ModelTheta::from_factor(beta, DVector::from_column_slice(&g[..q]), &f, noise).unwrap();
        let cfg = SpaceConfig { m: 50.0, m1: 5.0, m2: 5.0, ..SpaceConfig::default() };
        prop_assume!(in_theta_tilde(&theta, &cfg).holds());
        let (lo, _) = eigen_extremes(&theta.sigma_cov);
        prop_assert!(lo * theta.coefficient_norm().powi(2) <= theta.response_variance() * (1.0 + 1e-12));
    }
}

#[test]
fn json_round_trip_keeps_field_names() {
    let f = SigmaFactor::new(DVector::from_vec(vec![0.3, -0.1]), 0.7).unwrap();
    let theta = ModelTheta::from_factor(0.5, DVector::from_vec(vec![0.2, 0.1]), &f, 0.4).unwrap();
    let text = serde_json::to_string(&theta).unwrap();
    for key in ["beta", "gamma", "sigma_cov", "sigma_noise"] {
        assert!(text.contains(&format!("\"{key}\"")), "{text}");
    }
    let back: ModelTheta = serde_json::from_str(&text).unwrap();
    assert_eq!(back, theta);
    let cfg: SpaceConfig = serde_json::from_str(&serde_json::to_string(&SpaceConfig::default()).unwrap()).unwrap();
    assert_eq!(cfg, SpaceConfig::default());
}
