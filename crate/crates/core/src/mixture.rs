//! Equal-weight Gaussian mixtures evaluated in log space.
//!
//! Component `i` has center `Z_i` and precision `Γ_i`; its log-weight at `x`
//! is `y_i(x) = -½ (x - Z_i)ᵀ Γ_i (x - Z_i) + ½ log det Γ_i - (d/2) log 2π - log N`,
//! so the density is `Σ_i exp(y_i)`. The score and the ratio `π⁻¹Δπ` follow in
//! closed form from the softmax `σ(y)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{ensure_dim, Result};
use crate::linalg::{self, SpdMatrix};
use crate::points::Points;

#[derive(Debug, Clone)]
struct Component {
    precision: Vec<f64>,
    log_norm: f64,
    trace: f64,
}

#[derive(Debug, Clone)]
pub struct Mixture {
    dim: usize,
    centers: Arc<Points>,
    components: Vec<Component>,
}

/// Density, score and Laplacian ratio at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_density: f64,
    pub score: Vec<f64>,
    /// `π⁻¹ Δπ`.
    pub laplacian_ratio: f64,
}

impl Evaluation {
    /// `Δ log π = π⁻¹Δπ - |∇ log π|²`.
    pub fn laplacian_log_density(&self) -> f64 {
        self.laplacian_ratio - linalg::sq_norm(&self.score)
    }
}

impl Mixture {
    /// `precisions[i]` and `log_dets[i] = log det Γ_i` pair with `centers.row(i)`.
    pub fn new(centers: Arc<Points>, precisions: Vec<SpdMatrix>, log_dets: &[f64]) -> Result<Self> {
        ensure_dim(centers.len(), precisions.len())?;
        ensure_dim(centers.len(), log_dets.len())?;
        let dim = centers.dim();
        let log_n = (centers.len() as f64).ln();
        let half_log_2pi = 0.5 * dim as f64 * (2.0 * PI).ln();
        let components = precisions
            .into_iter()
            .zip(log_dets)
            .map(|(p, &ld)| {
                ensure_dim(dim, p.dim())?;
                Ok(Component {
                    trace: p.trace(),
                    log_norm: 0.5 * ld - half_log_2pi - log_n,
                    precision: p.into_vec(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dim,
            centers,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn precision(&self, i: usize) -> &[f64] {
        &self.components[i].precision
    }

    /// The per-component log-weights `y_i(x)`.
    pub fn log_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, x.len())?;
        let mut u = vec![0.0; self.dim];
        Ok((0..self.len())
            .map(|i| self.log_weight(i, x, &mut u))
            .collect())
    }

    #[inline]
    fn log_weight(&self, i: usize, x: &[f64], u: &mut [f64]) -> f64 {
        let c = &self.components[i];
        for ((ui, xi), zi) in u.iter_mut().zip(x).zip(self.centers.row(i)) {
            *ui = xi - zi;
        }
        -0.5 * linalg::quad_form(self.dim, &c.precision, u) + c.log_norm
    }

    /// Softmax weights `σ(y(x))`.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.log_weights(x)?;
        linalg::softmax_in_place(&mut y);
        Ok(y)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(linalg::lse_nonempty(&self.log_weights(x)?))
    }

    /// `∇ log π(x) = -Σ_i σ_i Γ_i (x - Z_i)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate_inner(x, false)?.score)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        self.evaluate_inner(x, true)
    }

    fn evaluate_inner(&self, x: &[f64], laplacian: bool) -> Result<Evaluation> {
        ensure_dim(self.dim, x.len())?;
        let d = self.dim;
        let n = self.len();
        let mut u = vec![0.0; n * d];
        let mut a = vec![0.0; n * d];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let c = &self.components[i];
            let ui = &mut u[i * d..(i + 1) * d];
            for ((v, xi), zi) in ui.iter_mut().zip(x).zip(self.centers.row(i)) {
                *v = xi - zi;
            }
            let ai = &mut a[i * d..(i + 1) * d];
            let mut quad = 0.0;
            for r in 0..d {
                let v = linalg::dot(&c.precision[r * d..(r + 1) * d], ui);
                ai[r] = -v;
                quad += ui[r] * v;
            }
            y[i] = -0.5 * quad + c.log_norm;
        }
        let log_density = linalg::softmax_in_place(&mut y);
        let mut score = vec![0.0; d];
        let mut ratio = 0.0;
        for i in 0..n {
            let s = y[i];
            if s == 0.0 {
                continue;
            }
            let ai = &a[i * d..(i + 1) * d];
            for (g, v) in score.iter_mut().zip(ai) {
                *g += s * v;
            }
            if laplacian {
                ratio += s * (linalg::sq_norm(ai) - self.components[i].trace);
            }
        }
        Ok(Evaluation {
            log_density,
            score,
            laplacian_ratio: if laplacian { ratio } else { f64::NAN },
        })
    }
}
