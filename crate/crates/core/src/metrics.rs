//! Evaluation: held-out NLL, unbiased MMD², nearest-neighbor memorization
//! statistics and covariance ellipses.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::io::format_g17;
use crate::kernel::KernelModel;
use crate::linalg;
use crate::points::Points;
use crate::rng::{self, Stream};

/// Points used to estimate the median-heuristic bandwidth.
pub const MEDIAN_SUBSAMPLE: usize = 2000;

/// `-(1/m) Σ_j log π̂(x_j)`.
pub fn nll(model: &KernelModel, heldout: &Points) -> Result<f64> {
    crate::training::heldout_nll(model, heldout)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of a seeded subsample of `X ∪ Y`.
    Median {
        seed: u64,
    },
}

/// Median pairwise distance over at most `MEDIAN_SUBSAMPLE` points of `X ∪ Y`.
pub fn median_bandwidth(x: &Points, y: &Points, seed: u64) -> Result<f64> {
    ensure_dim(x.dim(), y.dim())?;
    let total = x.len() + y.len();
    let row = |i: usize| {
        if i < x.len() {
            x.row(i)
        } else {
            y.row(i - x.len())
        }
    };
    let chosen: Vec<usize> = if total > MEDIAN_SUBSAMPLE {
        let mut r = rng::stream(seed, Stream::Metrics);
        let mut v = sample(&mut r, total, MEDIAN_SUBSAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };
    let mut dists = Vec::with_capacity(chosen.len() * chosen.len().saturating_sub(1) / 2);
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            dists.push(linalg::sq_dist(row(i), row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::Domain(
            "median bandwidth needs at least two points".into(),
        ));
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let h = *m;
    if !(h > 0.0) {
        return Err(Error::Domain("median pairwise distance is zero".into()));
    }
    Ok(h)
}

/// Unbiased U-statistic estimate of MMD² with the Gaussian kernel
/// `k(a, b) = exp(-|a - b|² / (2h²))`.
pub fn mmd2_unbiased(x: &Points, y: &Points, bandwidth: Bandwidth) -> Result<f64> {
    ensure_dim(x.dim(), y.dim())?;
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Domain(
            "MMD² needs at least two points per set".into(),
        ));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::Domain(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        Bandwidth::Median { seed } => median_bandwidth(x, y, seed)?,
    };
    let inv = 1.0 / (2.0 * h * h);
    let k = |a: &[f64], b: &[f64]| (-linalg::sq_dist(a, b) * inv).exp();
    let within = |p: &Points| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                s += k(p.row(i), p.row(j));
            }
        }
        2.0 * s / (p.len() * (p.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            cross += k(a, b);
        }
    }
    cross /= (x.len() * y.len()) as f64;
    Ok(within(x) + within(y) - 2.0 * cross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnStats {
    pub median: f64,
    pub q10: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
}

/// Distance from each sample to its nearest reference point (exhaustive scan).
pub fn nn_distances(samples: &Points, reference: &Points) -> Result<Vec<f64>> {
    ensure_dim(reference.dim(), samples.dim())?;
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::Domain(
            "nearest-neighbor distances need nonempty sets".into(),
        ));
    }
    Ok(samples
        .rows()
        .map(|s| {
            reference
                .rows()
                .map(|r| linalg::sq_dist(s, r))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn nn_distance_stats(samples: &Points, reference: &Points) -> Result<NnStats> {
    let mut d = nn_distances(samples, reference)?;
    d.sort_by(f64::total_cmp);
    Ok(NnStats {
        median: quantile(&d, 0.5),
        q10: quantile(&d, 0.1),
        q25: quantile(&d, 0.25),
        q75: quantile(&d, 0.75),
        q90: quantile(&d, 0.9),
    })
}

/// Ratio of median NN distances to the training set: generated samples
/// over held-out true samples. Well below 1 signals memorization.
pub fn nn_median_ratio(generated: &Points, heldout: &Points, train: &Points) -> Result<f64> {
    Ok(nn_distance_stats(generated, train)?.median / nn_distance_stats(heldout, train)?.median)
}

/// Eigendecomposition of one center's covariance `Γ(Z_i)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipse {
    pub index: usize,
    pub center: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` (entries `k, d + k, ...` in row-major) pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

/// Covariance ellipses of `k` distinct centers chosen with `seed`.
pub fn ellipses(model: &KernelModel, k: usize, seed: u64) -> Result<Vec<Ellipse>> {
    if k > model.n_centers() {
        return Err(Error::Domain(format!(
            "requested {k} ellipses from a model with {} centers",
            model.n_centers()
        )));
    }
    let d = model.dim();
    let mut r = rng::stream(seed, Stream::Metrics);
    let mut chosen = sample(&mut r, model.n_centers(), k).into_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|i| {
            let cov = &model.center_precision(i).covariance;
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let mut vecs = vec![0.0; d * d];
            for (col, &src) in order.iter().enumerate() {
                for row in 0..d {
                    vecs[row * d + col] = eig.eigenvectors[(row, src)];
                }
            }
            Ellipse {
                index: i,
                center: model.centers().row(i).to_vec(),
                eigenvalues: order.iter().map(|&a| eig.eigenvalues[a]).collect(),
                eigenvectors: vecs,
            }
        })
        .collect())
}

/// CSV `cx,cy,l1,l2,v1x,v1y,v2x,v2y` (2-D models only).
pub fn write_ellipses_csv<W: Write>(ellipses: &[Ellipse], mut out: W) -> Result<()> {
    writeln!(out, "cx,cy,l1,l2,v1x,v1y,v2x,v2y")?;
    for e in ellipses {
        if e.center.len() != 2 {
            return Err(Error::Unsupported(
                "ellipse CSV is defined for d = 2".into(),
            ));
        }
        let v = &e.eigenvectors;
        let cells = [
            e.center[0],
            e.center[1],
            e.eigenvalues[0],
            e.eigenvalues[1],
            v[0],
            v[2],
            v[1],
            v[3],
        ];
        let cells: Vec<String> = cells.iter().map(|&c| format_g17(c)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Sizes and seeds that produced a metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricProvenance {
    pub sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_info: Option<MetricProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd2_info: Option<MetricProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nn_median_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nn_info: Option<MetricProvenance>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        crate::io::to_json_g17(self)
    }
}
