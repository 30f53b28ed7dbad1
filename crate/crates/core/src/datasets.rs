//! Seeded synthetic datasets.
//!
//! Parameterizations (before the isotropic `N(0, noise² I)` jitter that every
//! generator adds):
//!
//! * `two_moons`: with probability ½ the upper arc `(cos u, sin u)`, otherwise
//!   the lower arc `(1 - cos u, 0.5 - sin u)`, `u ~ U[0, π]`.
//! * `checkerboard`: uniform over the eight unit squares `[i-2, i-1] x [j-2, j-1]`
//!   with `i + j` even, `i, j ∈ {0..3}`.
//! * `rings`: radius uniform in `{0.5, 1.0}`, angle `U[0, 2π)`.
//! * `spiral`: `r(u) (cos u, sin u)` with `r(u) = u / 3π`, `u ~ U[0, 3π]`.
//! * `swissroll2d`: `(u cos u, u sin u) / 4.5π`, `u ~ U[1.5π, 4.5π]`.
//! * `swissroll6d`: `(u cos u, h, u sin u) / 10`, `u ~ U[1.5π, 4.5π]`,
//!   `h ~ U[0, 21]`, zero-padded to six coordinates and rotated by a fixed
//!   orthogonal matrix (the same for every seed).
//! * `gmm_ground_truth`: an explicit Gaussian mixture.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{self, Cholesky, SpdMatrix};
use crate::points::Points;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    TwoMoons,
    Checkerboard,
    Rings,
    Spiral,
    Swissroll2d,
    Swissroll6d,
    GmmGroundTruth,
}

impl DatasetName {
    pub const ALL: [DatasetName; 7] = [
        DatasetName::TwoMoons,
        DatasetName::Checkerboard,
        DatasetName::Rings,
        DatasetName::Spiral,
        DatasetName::Swissroll2d,
        DatasetName::Swissroll6d,
        DatasetName::GmmGroundTruth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::TwoMoons => "two_moons",
            DatasetName::Checkerboard => "checkerboard",
            DatasetName::Rings => "rings",
            DatasetName::Spiral => "spiral",
            DatasetName::Swissroll2d => "swissroll2d",
            DatasetName::Swissroll6d => "swissroll6d",
            DatasetName::GmmGroundTruth => "gmm_ground_truth",
        }
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset '{s}'")))
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One weighted Gaussian component; `cov` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

/// A fully specified Gaussian mixture used as a ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruthGmm {
    dim: usize,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
    means: Vec<Vec<f64>>,
    factors: Vec<Cholesky>,
    precisions: Vec<SpdMatrix>,
    log_norms: Vec<f64>,
}

impl GroundTruthGmm {
    pub fn new(components: &[GmmComponent]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("gmm needs at least one component".into()))?;
        let dim = first.mean.len();
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || !total.is_finite() {
            return Err(Error::Config("gmm weights must be positive".into()));
        }
        let mut out = Self {
            dim,
            log_weights: Vec::new(),
            cumulative: Vec::new(),
            means: Vec::new(),
            factors: Vec::new(),
            precisions: Vec::new(),
            log_norms: Vec::new(),
        };
        let mut acc = 0.0;
        for c in components {
            ensure_dim(dim, c.mean.len())?;
            let cov = SpdMatrix::new(dim, c.cov.clone())
                .map_err(|_| Error::Config("gmm covariance must be SPD".into()))?;
            let chol = cov.cholesky()?;
            acc += c.weight / total;
            out.log_weights.push((c.weight / total).ln());
            out.cumulative.push(acc);
            out.means.push(c.mean.clone());
            out.log_norms
                .push(-0.5 * chol.log_det() - 0.5 * dim as f64 * (2.0 * PI).ln());
            out.precisions.push(chol.inverse());
            out.factors.push(chol);
        }
        Ok(out)
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        Self::new(&[GmmComponent {
            weight: 1.0,
            mean: vec![0.0; dim],
            cov: SpdMatrix::identity(dim).into_vec(),
        }])
        .expect("identity covariance")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.means.len())
            .map(|k| {
                let u: Vec<f64> = x.iter().zip(&self.means[k]).map(|(a, b)| a - b).collect();
                self.log_weights[k] + self.log_norms[k] - 0.5 * self.precisions[k].quad_form(&u)
            })
            .collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        linalg::lse_nonempty(&self.component_logs(x))
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `∇ log p(x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut w = self.component_logs(x);
        linalg::softmax_in_place(&mut w);
        let mut g = vec![0.0; self.dim];
        for (k, wk) in w.iter().enumerate() {
            let u: Vec<f64> = x.iter().zip(&self.means[k]).map(|(a, b)| a - b).collect();
            let pu = self.precisions[k].mul_vec(&u);
            for (gi, pi) in g.iter_mut().zip(pu) {
                *gi -= wk * pi;
            }
        }
        g
    }

    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let r: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|&c| r < c)
            .unwrap_or(self.cumulative.len() - 1);
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let l = self.factors[k].lower();
        for i in 0..self.dim {
            let lz: f64 = (0..=i).map(|j| l[i * self.dim + j] * z[j]).sum();
            out[i] = self.means[k][i] + lz;
        }
    }
}

/// Full description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    /// Components for `gmm_ground_truth`; ignored by the other generators.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<GmmComponent>,
}

impl DatasetSpec {
    pub fn new(name: DatasetName, n: usize, noise: f64, seed: u64) -> Self {
        Self {
            name,
            n,
            noise,
            seed,
            components: Vec::new(),
        }
    }

    pub fn gmm(components: Vec<GmmComponent>, n: usize, seed: u64) -> Self {
        Self {
            name: DatasetName::GmmGroundTruth,
            n,
            noise: 0.0,
            seed,
            components,
        }
    }

    pub fn dim(&self) -> usize {
        match self.name {
            DatasetName::Swissroll6d => 6,
            DatasetName::GmmGroundTruth => self.components.first().map_or(2, |c| c.mean.len()),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub spec: DatasetSpec,
}

const SWISSROLL_EMBEDDING_SEED: u64 = 0x5_3D_0006;

/// The fixed orthogonal matrix used to embed the 3D swiss roll in `R^6`.
pub fn swissroll_embedding() -> DMatrix<f64> {
    let mut rng = rng::stream(SWISSROLL_EMBEDDING_SEED, Stream::Embedding);
    let g = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign-fix so that the factorization is unique.
    for j in 0..6 {
        if r[(j, j)] < 0.0 {
            for i in 0..6 {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(Error::Config(format!(
            "noise must be nonnegative, got {}",
            spec.noise
        )));
    }
    let dim = spec.dim();
    let mut rng = rng::stream(spec.seed, Stream::Data);
    let mut data = vec![0.0; spec.n * dim];

    let gmm = match spec.name {
        DatasetName::GmmGroundTruth if spec.components.is_empty() => {
            Some(GroundTruthGmm::standard_normal(2))
        }
        DatasetName::GmmGroundTruth => Some(GroundTruthGmm::new(&spec.components)?),
        _ => None,
    };
    let embedding = (spec.name == DatasetName::Swissroll6d).then(swissroll_embedding);

    for row in data.chunks_exact_mut(dim) {
        match spec.name {
            DatasetName::TwoMoons => {
                let u = rng.random::<f64>() * PI;
                if rng.random_bool(0.5) {
                    row[0] = u.cos();
                    row[1] = u.sin();
                } else {
                    row[0] = 1.0 - u.cos();
                    row[1] = 0.5 - u.sin();
                }
            }
            DatasetName::Checkerboard => {
                let cell = rng.random_range(0..8usize);
                let i = cell / 2;
                let j = 2 * (cell % 2) + (i % 2);
                row[0] = i as f64 - 2.0 + rng.random::<f64>();
                row[1] = j as f64 - 2.0 + rng.random::<f64>();
            }
            DatasetName::Rings => {
                let radius = if rng.random_bool(0.5) { 0.5 } else { 1.0 };
                let angle = rng.random::<f64>() * 2.0 * PI;
                row[0] = radius * angle.cos();
                row[1] = radius * angle.sin();
            }
            DatasetName::Spiral => {
                let u = rng.random::<f64>() * 3.0 * PI;
                let r = u / (3.0 * PI);
                row[0] = r * u.cos();
                row[1] = r * u.sin();
            }
            DatasetName::Swissroll2d => {
                let u = rng.random_range(1.5 * PI..4.5 * PI);
                row[0] = u * u.cos() / (4.5 * PI);
                row[1] = u * u.sin() / (4.5 * PI);
            }
            DatasetName::Swissroll6d => {
                let u = rng.random_range(1.5 * PI..4.5 * PI);
                let h = rng.random_range(0.0..21.0);
                let p = [u * u.cos() / 10.0, h / 10.0, u * u.sin() / 10.0];
                let q = embedding.as_ref().expect("embedding built for swissroll6d");
                for (i, v) in row.iter_mut().enumerate() {
                    *v = (0..3).map(|k| q[(i, k)] * p[k]).sum();
                }
            }
            DatasetName::GmmGroundTruth => {
                gmm.as_ref().expect("gmm built").sample_into(&mut rng, row);
            }
        }
        if spec.noise > 0.0 {
            for v in row.iter_mut() {
                *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    Ok(Dataset {
        points: Points::new(dim, data)?,
        spec: spec.clone(),
    })
}

/// Seeded shuffle split into `(⌊f n⌋, n - ⌊f n⌋)` points.
pub fn split(points: &Points, train_fraction: f64, seed: u64) -> Result<(Points, Points)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let k = (train_fraction * n as f64).floor() as usize;
    Ok((points.select(&idx[..k]), points.select(&idx[k..])))
}

/// `count` points drawn without replacement.
pub fn subsample_centers(points: &Points, count: usize, seed: u64) -> Result<Points> {
    let indices = subsample_indices(points.len(), count, seed)?;
    Ok(points.select(&indices))
}

pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::Domain(format!(
            "cannot draw {count} centers from {n} points"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Centers);
    Ok(rand::seq::index::sample(&mut rng, n, count).into_vec())
}
