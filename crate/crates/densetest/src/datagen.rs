use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{build_sigma, decompose_sigma, split_plan, ModelTheta, SigmaFactor, SpaceConfig, SplitPlan};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DMatrix<f64>,
    pub split: SplitPlan,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if z.len() != n || w.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, z {}, W {}",
                z.len(),
                w.nrows()
            )));
        }
        Ok(Self {
            y,
            z,
            w,
            split: split_plan(n)?,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols() + 1
    }

    /// Design X = [Z, W].
    pub fn design(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n(), self.p());
        x.column_mut(0).copy_from(&self.z);
        x.columns_mut(1, self.w.ncols()).copy_from(&self.w);
        x
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string(), "z".to_string()];
        header.extend((1..self.p()).map(|j| format!("w_{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(self.p() + 1);
            rec.push(self.y[i].to_string());
            rec.push(self.z[i].to_string());
            rec.extend(self.w.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "y" || &header[1] != "z" {
            return Err(Error::InvalidStructure(
                "CSV header must start with y,z".into(),
            ));
        }
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("w_{}", j + 1) {
                return Err(Error::InvalidStructure(format!(
                    "unexpected column {name}"
                )));
            }
        }
        let q = header.len() - 2;
        let (mut y, mut z, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidStructure(format!("bad number {:?}: {e}", &rec[k])))
            };
            y.push(parse(0)?);
            z.push(parse(1)?);
            for k in 0..q {
                w.push(parse(k + 2)?);
            }
        }
        let n = y.len();
        Self::new(
            DVector::from_vec(y),
            DVector::from_vec(z),
            DMatrix::from_row_slice(n, q, &w),
        )
    }
}

/// Seed sidecar written next to an exported dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub theta: ModelTheta,
}

pub fn sample_dataset(theta: &ModelTheta, n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(invalid(format!("need n >= 4, got {n}")));
    }
    let q = theta.gamma.len();
    let mut rng = rng::stream(seed);
    let mut z = DVector::zeros(n);
    let mut w = DMatrix::zeros(n, q);
    let mut draw = vec![0.0; q + 1];
    match decompose_sigma(&theta.sigma_cov) {
        Ok(f) => {
            for i in 0..n {
                fill_normal(&mut rng, &mut draw);
                let mut zi = 0.0;
                for j in 0..q {
                    w[(i, j)] = draw[j];
                    zi += f.pi[j] * draw[j];
                }
                z[i] = zi + f.sigma_v * draw[q];
            }
        }
        Err(Error::NotPositiveDefinite(msg)) => return Err(Error::Factorization(msg)),
        Err(_) => {
            let l = linalg::sampling_factor(&theta.sigma_cov, 1e-12)?;
            let mut x = DVector::zeros(q + 1);
            for i in 0..n {
                fill_normal(&mut rng, &mut draw);
                x.copy_from_slice(&draw);
                let row = &l * &x;
                z[i] = row[0];
                for j in 0..q {
                    w[(i, j)] = row[j + 1];
                }
            }
        }
    }
    let mut y = &z * theta.beta + &w * &theta.gamma;
    if theta.sigma_noise != 0.0 {
        for yi in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *yi += theta.sigma_noise * e;
        }
    }
    Dataset::new(y, z, w)
}

fn fill_normal<R: Rng>(rng: &mut R, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn scale_dataset(data: &Dataset, d: f64) -> Result<Dataset> {
    if !(d > 0.0) {
        return Err(invalid(format!("scale must be positive, got {d}")));
    }
    Ok(Dataset {
        y: &data.y * d,
        ..data.clone()
    })
}

/// Lower-triangular factor of cov(W, Z, y).
#[derive(Debug, Clone, PartialEq)]
pub struct LTheta {
    pub l: DMatrix<f64>,
}

pub fn l_factor(theta: &ModelTheta) -> Result<LTheta> {
    let f = decompose_sigma(&theta.sigma_cov)?;
    Ok(l_from_parts(theta.beta, &theta.gamma, &f, theta.sigma_noise))
}

pub fn l_from_parts(beta: f64, gamma: &DVector<f64>, f: &SigmaFactor, sigma: f64) -> LTheta {
    let q = gamma.len();
    let mut l = DMatrix::zeros(q + 2, q + 2);
    for j in 0..q {
        l[(j, j)] = 1.0;
        l[(q, j)] = f.pi[j];
        l[(q + 1, j)] = f.pi[j] * beta + gamma[j];
    }
    l[(q, q)] = f.sigma_v;
    l[(q + 1, q)] = beta * f.sigma_v;
    l[(q + 1, q + 1)] = sigma;
    LTheta { l }
}

/// Binary vectors of length `dim` with exactly `m` ones, lexicographic by support.
#[derive(Debug, Clone)]
pub struct Supports {
    dim: usize,
    current: Option<Vec<usize>>,
}

impl Supports {
    pub fn new(dim: usize, m: usize) -> Self {
        let current = (m <= dim).then(|| (0..m).collect());
        Self { dim, current }
    }
}

impl Iterator for Supports {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let m = out.len();
        let mut next = out.clone();
        let mut i = m;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.dim - m + i {
                next[i] += 1;
                for k in i + 1..m {
                    next[k] = next[k - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

pub fn support_to_delta(dim: usize, support: &[usize]) -> Vec<u8> {
    let mut d = vec![0u8; dim];
    for &j in support {
        d[j] = 1;
    }
    d
}

pub fn enumerate_deltas(dim: usize, m: usize) -> impl Iterator<Item = Vec<u8>> + Clone {
    Supports::new(dim, m).map(move |s| support_to_delta(dim, &s))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Least-favorable null family around an alternative.
#[derive(Debug, Clone)]
pub struct PriorFamily {
    pub theta_star: ModelTheta,
    pub factor_star: SigmaFactor,
    pub m: usize,
    pub h: f64,
    pub r: f64,
}

impl PriorFamily {
    /// Family with explicit offset `h` between the alternative and the null.
    pub fn with_offset(theta_star: &ModelTheta, m: usize, h: f64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("family needs m >= 1"));
        }
        if !(0.0..1.0).contains(&h) {
            return Err(invalid(format!("offset h must lie in [0,1), got {h}")));
        }
        let factor_star = decompose_sigma(&theta_star.sigma_cov)?;
        if m > factor_star.pi.len() {
            return Err(invalid(format!(
                "m = {m} exceeds p-1 = {}",
                factor_star.pi.len()
            )));
        }
        if !(theta_star.sigma_noise > 0.0) {
            return Err(invalid("alternative needs positive noise level"));
        }
        let r = factor_star.sigma_v / theta_star.sigma_noise;
        if 1.0 - h * r * r * (1.0 - h) <= 0.0 {
            return Err(Error::Domain(format!(
                "null noise variance is not positive for h={h}, r={r}"
            )));
        }
        Ok(Self {
            theta_star: theta_star.clone(),
            factor_star,
            m,
            h,
            r,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor_star.pi.len()
    }

    pub fn size(&self) -> f64 {
        binomial(self.dim(), self.m)
    }

    pub fn beta0(&self) -> f64 {
        self.theta_star.beta - self.h
    }

    pub fn null_sigma_v(&self) -> f64 {
        self.factor_star.sigma_v * (1.0 - self.h).sqrt()
    }

    pub fn null_noise(&self) -> f64 {
        let (h, r) = (self.h, self.r);
        self.theta_star.sigma_noise * (1.0 - h * r * r + h * h * r * r).sqrt()
    }

    pub fn member_parts(&self, support: &[usize]) -> (DVector<f64>, SigmaFactor) {
        let step = (self.h / self.m as f64).sqrt();
        let mut pi = self.factor_star.pi.clone();
        for &j in support {
            pi[j] += self.factor_star.sigma_v * step;
        }
        let mut gamma = &self.theta_star.gamma + &pi * self.h;
        let bump = self.r * (1.0 - self.h) * self.theta_star.sigma_noise * step;
        for &j in support {
            gamma[j] += bump;
        }
        let factor = SigmaFactor {
            pi,
            sigma_v: self.null_sigma_v(),
        };
        (gamma, factor)
    }

    pub fn member(&self, support: &[usize]) -> ModelTheta {
        let (gamma, factor) = self.member_parts(support);
        let sigma_cov = build_sigma(&factor).expect("null residual scale is positive");
        ModelTheta {
            beta: self.beta0(),
            gamma,
            sigma_cov,
            sigma_noise: self.null_noise(),
        }
    }

    pub fn member_l(&self, support: &[usize]) -> LTheta {
        let (gamma, factor) = self.member_parts(support);
        l_from_parts(self.beta0(), &gamma, &factor, self.null_noise())
    }

    pub fn supports(&self) -> Supports {
        Supports::new(self.dim(), self.m)
    }

    pub fn members(&self) -> impl Iterator<Item = (Vec<u8>, ModelTheta)> + '_ {
        let dim = self.dim();
        self.supports()
            .map(move |s| (support_to_delta(dim, &s), self.member(&s)))
    }
}

/// Family with h = d * s * ln(p) / n, validated against the detection regime.
pub fn prior_family(
    theta_star: &ModelTheta,
    cfg: &SpaceConfig,
    n: usize,
    p: usize,
    d: f64,
) -> Result<PriorFamily> {
    if theta_star.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "theta has p = {}, requested {p}",
            theta_star.p()
        )));
    }
    let bounds = crate::lowerbound::detection_bounds(cfg, n, p)?;
    if !(0.0..=bounds.rho).contains(&d) {
        return Err(invalid(format!("d must lie in [0, {}], got {d}", bounds.rho)));
    }
    let h = d * cfg.s as f64 * (p as f64).ln() / n as f64;
    PriorFamily::with_offset(theta_star, cfg.s / 2, h)
}
