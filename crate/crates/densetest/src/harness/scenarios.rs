use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{log_log_slope, ExperimentConfig, ResultRow, Scenario};
use crate::datagen::{sample_dataset, scale_dataset};
use crate::error::{Error, Result};
use crate::inference::{fit_pipeline_with, plug_in_dataset, PipelineOptions, TestOutcome, TuningConstants};
use crate::model::{in_theta_tilde, precision_first_row, ModelTheta, SigmaFactor, SpaceConfig};
use crate::{par, rng};

fn replicate<T: Send>(points: usize, reps: usize, f: impl Fn(usize, usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    par::map_indexed(points * reps, |idx| f(idx / reps, idx % reps))
        .into_iter()
        .collect()
}

fn harness_options(cfg: &ExperimentConfig) -> PipelineOptions {
    let _ = cfg;
    PipelineOptions {
        fallback: true,
        ..PipelineOptions::default()
    }
}

fn require_tilde(theta: &ModelTheta, space: &SpaceConfig) -> Result<()> {
    let m = in_theta_tilde(theta, space);
    if m.holds() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "scenario parameter lies outside the parameter space: {:?}",
            m.reasons
        )))
    }
}

/// Known factor with nonzero regression and a fully dense coefficient vector.
pub fn dense_theta(p: usize, noise: f64) -> Result<ModelTheta> {
    let q = p - 1;
    let pi = DVector::from_fn(q, |j, _| if j % 2 == 0 { 0.4 } else { -0.4 } / (q as f64).sqrt());
    let factor = SigmaFactor::new(pi, 1.0)?;
    let raw = DVector::from_fn(q, |j, _| 1.0 + 0.5 * (j as f64 + 1.0).sin());
    let gamma = &raw * (0.8 / raw.norm());
    ModelTheta::from_factor(1.0, gamma, &factor, noise)
}

/// Identity covariance except for `s_true - 1` regression entries.
pub fn sparse_row_theta(p: usize, s_true: usize, noise: f64) -> Result<ModelTheta> {
    let q = p - 1;
    let pi = DVector::from_fn(q, |j, _| if j + 1 < s_true { 0.3 } else { 0.0 });
    let factor = SigmaFactor::new(pi, 1.0)?;
    ModelTheta::from_factor(1.0, DVector::from_element(q, 0.1), &factor, noise)
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub p: usize,
    pub mean_abs_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub p: usize,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateStudy {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    pub points: Vec<RatePoint>,
    pub slopes: Vec<SlopeFit>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

fn cartesian<A: Copy, B: Copy>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
}

pub fn run_rate_plugin(cfg: &ExperimentConfig) -> Result<RateStudy> {
    let id = Scenario::RatePlugin.id();
    let points = cartesian(&cfg.grid.p, &cfg.grid.n);
    let thetas = cfg
        .grid
        .p
        .iter()
        .map(|&p| {
            let t = dense_theta(p, 1.0)?;
            require_tilde(&t, &cfg.space)?;
            let row = precision_first_row(&t.factor()?)?;
            Ok((p, t, row))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = replicate(points.len(), cfg.reps, |g, rep| {
        let (p, n) = points[g];
        let (_, theta, row) = thetas.iter().find(|(pp, _, _)| *pp == p).expect("theta per p");
        let seed = rng::derive_seed(cfg.seed, id, g as u64, rep as u64);
        let data = sample_dataset(theta, n, seed)?;
        let est = plug_in_dataset(row, &data)?;
        Ok(ResultRow {
            scenario: Scenario::RatePlugin.name().into(),
            n,
            p,
            s: cfg.space.s,
            k: p,
            offset: 0.0,
            replicate: rep,
            beta_hat: est,
            c_n: None,
            reject: None,
            abs_error: (est - theta.beta).abs(),
            seed_used: seed,
            s_true: None,
            scale: None,
        })
    })?;
    let mut summary = Vec::new();
    for (g, &(p, n)) in points.iter().enumerate() {
        let errs: Vec<f64> = rows[g * cfg.reps..(g + 1) * cfg.reps].iter().map(|r| r.abs_error).collect();
        let (mean, se) = mean_and_se(&errs);
        summary.push(RatePoint { n, p, mean_abs_error: mean, std_error: se });
    }
    let slopes = cfg
        .grid
        .p
        .iter()
        .map(|&p| {
            let pts: Vec<(f64, f64)> = summary
                .iter()
                .filter(|r| r.p == p)
                .map(|r| (r.n as f64, r.mean_abs_error))
                .collect();
            SlopeFit { p, slope: log_log_slope(&pts) }
        })
        .collect();
    Ok(RateStudy { rows, points: summary, slopes })
}

#[derive(Debug, Clone, Serialize)]
pub struct SizePowerPoint {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub offset: f64,
    pub c_n: f64,
    pub rejection_rate: f64,
    pub std_error: f64,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizePowerStudy {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    pub points: Vec<SizePowerPoint>,
}

impl SizePowerStudy {
    /// Rejection rate nondecreasing in offset within `k` standard errors, per (n, p, s).
    pub fn monotone_within(&self, k: f64) -> bool {
        self.points.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            let same = a.n == b.n && a.p == b.p && a.s == b.s;
            !same || b.offset < a.offset || b.rejection_rate + k * (a.std_error.max(b.std_error)) >= a.rejection_rate
        })
    }
}

pub fn run_size_power(cfg: &ExperimentConfig) -> Result<SizePowerStudy> {
    let id = Scenario::SizePower.id();
    let mut offsets = cfg.grid.offsets.clone();
    offsets.sort_by(f64::total_cmp);
    let mut points = Vec::new();
    for &n in &cfg.grid.n {
        for &p in &cfg.grid.p {
            for &s in &cfg.grid.s {
                for &o in &offsets {
                    points.push((n, p, s, o));
                }
            }
        }
    }
    let opts = harness_options(cfg);
    let theta_for = |p: usize| -> Result<ModelTheta> {
        let t = ModelTheta::new(1.0, DVector::zeros(p - 1), DMatrix::identity(p, p), 0.1)?;
        require_tilde(&t, &cfg.space)?;
        Ok(t)
    };
    for &p in &cfg.grid.p {
        theta_for(p)?;
    }
    let results = replicate(points.len(), cfg.reps, |g, rep| {
        let (n, p, s, offset) = points[g];
        let space = SpaceConfig { s, ..cfg.space };
        let theta = theta_for(p)?;
        let tc = TuningConstants::with_form(&space, n, p, opts.cn_form);
        let beta0 = theta.beta - offset * tc.c_n;
        let seed = rng::derive_seed(cfg.seed, id, g as u64, rep as u64);
        let data = sample_dataset(&theta, n, seed)?;
        let (est, beta_hat) = fit_pipeline_with(&data, &space, &opts)?;
        let out = TestOutcome::decide(beta_hat, tc.c_n, beta0);
        Ok((
            ResultRow {
                scenario: Scenario::SizePower.name().into(),
                n,
                p,
                s,
                k: 1,
                offset,
                replicate: rep,
                beta_hat,
                c_n: Some(tc.c_n),
                reject: Some(out.reject),
                abs_error: (beta_hat - theta.beta).abs(),
                seed_used: seed,
                s_true: Some(1),
                scale: None,
            },
            est.fallback_used,
        ))
    })?;
    let mut summary = Vec::new();
    for (g, &(n, p, s, offset)) in points.iter().enumerate() {
        let chunk = &results[g * cfg.reps..(g + 1) * cfg.reps];
        let hits: Vec<f64> = chunk.iter().map(|(r, _)| f64::from(u8::from(r.reject == Some(true)))).collect();
        let rate = hits.iter().sum::<f64>() / hits.len() as f64;
        summary.push(SizePowerPoint {
            n,
            p,
            s,
            offset,
            c_n: chunk[0].0.c_n.unwrap_or(f64::NAN),
            rejection_rate: rate,
            std_error: (rate * (1.0 - rate) / hits.len() as f64).sqrt(),
            fallback_count: chunk.iter().filter(|(_, f)| *f).count(),
        });
    }
    Ok(SizePowerStudy {
        rows: results.into_iter().map(|(r, _)| r).collect(),
        points: summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptivityPoint {
    pub n: usize,
    pub p: usize,
    pub s_budget: usize,
    pub s_true: usize,
    pub c_n_budget: f64,
    pub c_n_oracle: f64,
    pub ratio_full: f64,
    pub ratio_linear: f64,
    pub coverage: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptivityStudy {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    pub points: Vec<AdaptivityPoint>,
}

pub fn run_adaptivity(cfg: &ExperimentConfig) -> Result<AdaptivityStudy> {
    let id = Scenario::Adaptivity.id();
    let mut points = Vec::new();
    for &n in &cfg.grid.n {
        for &p in &cfg.grid.p {
            for &(sb, st) in &cfg.grid.budgets {
                if st > p {
                    return Err(Error::Config(format!("s_true = {st} exceeds p = {p}")));
                }
                points.push((n, p, sb, st));
            }
        }
    }
    let opts = harness_options(cfg);
    for &(_, p, _, st) in &points {
        require_tilde(&sparse_row_theta(p, st, 0.5)?, &cfg.space)?;
    }
    let rows = replicate(points.len(), cfg.reps, |g, rep| {
        let (n, p, sb, st) = points[g];
        let theta = sparse_row_theta(p, st, 0.5)?;
        let space = SpaceConfig { s: sb, ..cfg.space };
        let seed = rng::derive_seed(cfg.seed, id, g as u64, rep as u64);
        let data = sample_dataset(&theta, n, seed)?;
        let (_, beta_hat) = fit_pipeline_with(&data, &space, &opts)?;
        let tc = TuningConstants::with_form(&space, n, p, opts.cn_form);
        let out = TestOutcome::decide(beta_hat, tc.c_n, theta.beta);
        Ok(ResultRow {
            scenario: Scenario::Adaptivity.name().into(),
            n,
            p,
            s: sb,
            k: p,
            offset: 0.0,
            replicate: rep,
            beta_hat,
            c_n: Some(tc.c_n),
            reject: Some(out.reject),
            abs_error: (beta_hat - theta.beta).abs(),
            seed_used: seed,
            s_true: Some(st),
            scale: None,
        })
    })?;
    let mut summary = Vec::new();
    for (g, &(n, p, sb, st)) in points.iter().enumerate() {
        let chunk = &rows[g * cfg.reps..(g + 1) * cfg.reps];
        let covered = chunk.iter().filter(|r| r.reject == Some(false)).count() as f64 / chunk.len() as f64;
        let terms = TuningConstants::cn_terms(&cfg.space, n, p, opts.cn_form);
        summary.push(AdaptivityPoint {
            n,
            p,
            s_budget: sb,
            s_true: st,
            c_n_budget: terms.at(sb),
            c_n_oracle: terms.at(st),
            ratio_full: terms.at(sb) / terms.at(st),
            ratio_linear: (terms.slope * sb as f64) / (terms.slope * st as f64),
            coverage: covered,
            std_error: (covered * (1.0 - covered) / chunk.len() as f64).sqrt(),
        });
    }
    Ok(AdaptivityStudy { rows, points: summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorPoint {
    pub n: usize,
    pub p: usize,
    pub median_abs_error: f64,
    pub mean_abs_error: f64,
    pub min_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiselessStudy {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    pub points: Vec<ErrorPoint>,
    pub slope: Option<f64>,
}

/// Coefficient on Z in the noiseless scenario; with the unit-sphere draw scaled by 0.8 the
/// coefficient vector has norm one.
const NOISELESS_BETA: f64 = 0.6;

pub fn run_noiseless_dense(cfg: &ExperimentConfig) -> Result<NoiselessStudy> {
    let id = Scenario::NoiselessDense.id();
    let ns = cfg.grid.n.clone();
    let bases = ns
        .iter()
        .map(|&n| {
            let p = 2 * n + 1;
            ModelTheta::new(NOISELESS_BETA, DVector::zeros(p - 1), DMatrix::identity(p, p), 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = replicate(ns.len(), cfg.reps, |g, rep| {
        let n = ns[g];
        let base = &bases[g];
        let p = base.p();
        let seed = rng::derive_seed(cfg.seed, id, g as u64, rep as u64);
        let mut coef_rng = rng::stream(rng::splitmix64(seed));
        let mut gamma = DVector::from_fn(p - 1, |_, _| coef_rng.sample::<f64, _>(StandardNormal));
        gamma *= 0.8 / gamma.norm();
        let mut data = sample_dataset(base, n, seed)?;
        data.y += &data.w * &gamma;
        let est = data.z.dot(&data.y) / n as f64;
        Ok(ResultRow {
            scenario: Scenario::NoiselessDense.name().into(),
            n,
            p,
            s: 1,
            k: p,
            offset: 0.0,
            replicate: rep,
            beta_hat: est,
            c_n: None,
            reject: None,
            abs_error: (est - NOISELESS_BETA).abs(),
            seed_used: seed,
            s_true: Some(1),
            scale: None,
        })
    })?;
    let mut points = Vec::new();
    for (g, &n) in ns.iter().enumerate() {
        let errs: Vec<f64> = rows[g * cfg.reps..(g + 1) * cfg.reps].iter().map(|r| r.abs_error).collect();
        points.push(ErrorPoint {
            n,
            p: 2 * n + 1,
            median_abs_error: median(&errs),
            mean_abs_error: mean_and_se(&errs).0,
            min_abs_error: errs.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    let slope = log_log_slope(&points.iter().map(|e| (e.n as f64, e.median_abs_error)).collect::<Vec<_>>());
    Ok(NoiselessStudy { rows, points, slope })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub comparisons: usize,
    pub max_beta_deviation: f64,
    pub decision_agreement: f64,
    pub plugin_max_deviation: f64,
    pub reject_rate: f64,
}

impl ScalingSummary {
    pub fn passed(&self) -> bool {
        self.max_beta_deviation <= 1e-9 && self.decision_agreement == 1.0 && self.plugin_max_deviation <= 1e-12
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingStudy {
    #[serde(skip)]
    pub rows: Vec<ResultRow>,
    pub summary: ScalingSummary,
}

pub fn run_scaling_equivariance(cfg: &ExperimentConfig) -> Result<ScalingStudy> {
    let id = Scenario::ScalingEquivariance.id();
    let mut points = Vec::new();
    for &n in &cfg.grid.n {
        for &p in &cfg.grid.p {
            for &s in &cfg.grid.s {
                for &d in &cfg.grid.scales {
                    points.push((n, p, s, d));
                }
            }
        }
    }
    let opts = PipelineOptions::default();
    for &p in &cfg.grid.p {
        require_tilde(&dense_theta(p, 0.5)?, &cfg.space)?;
    }
    let results = replicate(points.len(), cfg.reps, |g, rep| {
        let (n, p, s, d) = points[g];
        let theta = dense_theta(p, 0.5)?;
        let row = precision_first_row(&theta.factor()?)?;
        let space = SpaceConfig { s, ..cfg.space };
        let scaled_space = space.scaled(d);
        let tc = TuningConstants::with_form(&space, n, p, opts.cn_form);
        let tc_scaled = TuningConstants::with_form(&scaled_space, n, p, opts.cn_form);
        let beta0 = theta.beta - tc.c_n;
        let seed = rng::derive_seed(cfg.seed, id, (g / cfg.grid.scales.len()) as u64, rep as u64);
        let data = sample_dataset(&theta, n, seed)?;
        let scaled = scale_dataset(&data, d)?;
        let (_, b) = fit_pipeline_with(&data, &space, &opts)?;
        let (_, b_scaled) = fit_pipeline_with(&scaled, &scaled_space, &opts)?;
        let plain = TestOutcome::decide(b, tc.c_n, beta0);
        let lifted = TestOutcome::decide(b_scaled, tc_scaled.c_n, d * beta0);
        let plug_dev = (plug_in_dataset(&row, &scaled)? - d * plug_in_dataset(&row, &data)?).abs();
        Ok((
            ResultRow {
                scenario: Scenario::ScalingEquivariance.name().into(),
                n,
                p,
                s,
                k: p,
                offset: 1.0,
                replicate: rep,
                beta_hat: b_scaled,
                c_n: Some(tc_scaled.c_n),
                reject: Some(lifted.reject),
                abs_error: (b_scaled - d * b).abs(),
                seed_used: seed,
                s_true: None,
                scale: Some(d),
            },
            plain.reject == lifted.reject,
            plug_dev,
        ))
    })?;
    let total = results.len();
    let summary = ScalingSummary {
        comparisons: total,
        max_beta_deviation: results.iter().map(|(r, _, _)| r.abs_error).fold(0.0, f64::max),
        decision_agreement: results.iter().filter(|(_, a, _)| *a).count() as f64 / total as f64,
        plugin_max_deviation: results.iter().map(|(_, _, d)| *d).fold(0.0, f64::max),
        reject_rate: results.iter().filter(|(r, _, _)| r.reject == Some(true)).count() as f64 / total as f64,
    };
    Ok(ScalingStudy {
        rows: results.into_iter().map(|(r, _, _)| r).collect(),
        summary,
    })
}
