//! The WPO-informed kernel model.
//!
//! A mixture of `N` Gaussians centered at fixed points `Z_i` with learned
//! precisions `Γ(Z_i)` is the terminal density `π̂`. Under Brownian noising
//! with diffusion `β`, the density at noise time `s` stays a mixture with
//! precisions `Γ_s = (Γ⁻¹ + β² s I)⁻¹`, and `U(x, t) = -β² log η̂(x, T - t)`
//! solves the viscous HJB equation
//! `-∂ₜU + ½|∇U|² = (β²/2) ΔU` exactly.
//!
//! Time conventions: `s` is forward (noising) time, `t = T - s` is the
//! denoising time of the control problem. `score` is always `∇ log η`.

use std::sync::Arc;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{self, Cholesky, LowerTriangular, SpdMatrix};
use crate::mixture::{Evaluation, Mixture};
use crate::points::Points;
use crate::precision::PrecisionProvider;

/// Cached per-center quantities, rebuilt after every parameter update.
#[derive(Debug, Clone)]
pub struct CenterPrecision {
    pub factor: LowerTriangular,
    pub precision: SpdMatrix,
    pub covariance: SpdMatrix,
    pub log_det: f64,
    /// Upper-triangular `L⁻ᵀ` (row-major); `L⁻ᵀ ξ ~ N(0, Γ⁻¹)` for `ξ ~ N(0, I)`.
    pub sampling_factor: Vec<f64>,
}

impl CenterPrecision {
    fn from_factor(factor: LowerTriangular) -> Result<Self> {
        let d = factor.dim();
        let chol = factor.to_cholesky();
        // L⁻¹ column by column.
        let mut l_inv = vec![0.0; d * d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            chol.forward_solve(&mut col);
            for i in 0..d {
                l_inv[i * d + j] = col[i];
            }
        }
        let mut sampling_factor = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                sampling_factor[i * d + j] = l_inv[j * d + i];
            }
        }
        Ok(Self {
            precision: linalg::cholesky_to_precision(&factor),
            covariance: chol.inverse(),
            log_det: factor.log_det_product(),
            sampling_factor,
            factor,
        })
    }
}

/// `Γ_s = (Γ⁻¹ + β² s I)⁻¹`, via Cholesky solves.
pub fn evolve_precision(gamma: &SpdMatrix, beta: f64, s: f64) -> Result<SpdMatrix> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "noise time must be nonnegative, got {s}"
        )));
    }
    let chol = gamma.cholesky()?;
    if s == 0.0 {
        return Ok(gamma.clone());
    }
    let cov = chol.inverse();
    Ok(evolve_covariance(&cov, beta, s)?.0)
}

/// Precision and its log-determinant for covariance `C + β² s I`.
fn evolve_covariance(cov: &SpdMatrix, beta: f64, s: f64) -> Result<(SpdMatrix, f64)> {
    let d = cov.dim();
    let mut widened = cov.as_slice().to_vec();
    for i in 0..d {
        widened[i * d + i] += beta * beta * s;
    }
    let chol = Cholesky::factor(d, &widened)?;
    Ok((chol.inverse(), -chol.log_det()))
}

/// Residual of the HJB equation at one `(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbResidual {
    /// `-∂ₜU + ½|∇U|² - (β²/2) ΔU`.
    pub residual: f64,
    /// The finite-difference `∂ₜU` used in the residual.
    pub time_derivative: f64,
}

impl HjbResidual {
    /// `|r| / (1 + |∂ₜU|)`.
    pub fn normalized(&self) -> f64 {
        self.residual.abs() / (1.0 + self.time_derivative.abs())
    }
}

/// Maps a cached center precision to its precision at noise time `s`.
pub type Evolution<'a> = &'a (dyn Fn(&CenterPrecision, f64, f64) -> Result<SpdMatrix> + Sync);

#[derive(Debug, Clone)]
pub struct KernelModel {
    centers: Arc<Points>,
    provider: PrecisionProvider,
    beta: f64,
    horizon: f64,
    cache: Vec<CenterPrecision>,
    terminal: Mixture,
}

impl KernelModel {
    pub fn new(
        centers: Points,
        provider: PrecisionProvider,
        beta: f64,
        horizon: f64,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Domain(
                "a kernel model needs at least one center".into(),
            ));
        }
        if !(beta > 0.0 && beta.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!(
                "beta and horizon must be positive, got beta={beta}, horizon={horizon}"
            )));
        }
        ensure_dim(centers.dim(), provider.dim())?;
        provider.check_centers(centers.len())?;
        let centers = Arc::new(centers);
        let (cache, terminal) = build_cache(&centers, &provider)?;
        Ok(Self {
            centers,
            provider,
            beta,
            horizon,
            cache,
            terminal,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.dim()
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn shared_centers(&self) -> &Arc<Points> {
        &self.centers
    }

    pub fn provider(&self) -> &PrecisionProvider {
        &self.provider
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn center_precision(&self, i: usize) -> &CenterPrecision {
        &self.cache[i]
    }

    pub fn center_precisions(&self) -> &[CenterPrecision] {
        &self.cache
    }

    /// Replaces the provider parameters and rebuilds the precision cache.
    /// On failure the model is left unchanged.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim(self.provider.num_params(), params.len())?;
        let mut provider = self.provider.clone();
        provider.params_mut().copy_from_slice(params);
        let (cache, terminal) = build_cache(&self.centers, &provider)?;
        self.provider = provider;
        self.cache = cache;
        self.terminal = terminal;
        Ok(())
    }

    /// Applies `f` to the parameters, then rebuilds the cache.
    pub fn update_params(&mut self, f: impl FnOnce(&mut [f64])) -> Result<()> {
        let mut params = self.provider.params().to_vec();
        f(&mut params);
        self.set_params(&params)
    }

    fn check_noise_time(&self, s: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(Error::Domain(format!(
                "noise time {s} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// The terminal mixture `π̂` (noise time 0).
    pub fn terminal_mixture(&self) -> &Mixture {
        &self.terminal
    }

    /// The evolved mixture `η̂(·, s)`, `0 ≤ s ≤ T`.
    pub fn mixture_at(&self, s: f64) -> Result<Mixture> {
        self.check_noise_time(s)?;
        if s == 0.0 {
            return Ok(self.terminal.clone());
        }
        self.mixture_at_unchecked(s)
    }

    /// Like `mixture_at` but accepts any `s ≥ 0` (e.g. beyond the horizon).
    pub fn mixture_at_unchecked(&self, s: f64) -> Result<Mixture> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!(
                "noise time must be nonnegative, got {s}"
            )));
        }
        let mut precisions = Vec::with_capacity(self.cache.len());
        let mut log_dets = Vec::with_capacity(self.cache.len());
        for c in &self.cache {
            let (p, ld) = evolve_covariance(&c.covariance, self.beta, s)?;
            precisions.push(p);
            log_dets.push(ld);
        }
        Mixture::new(Arc::clone(&self.centers), precisions, &log_dets)
    }

    /// Mixture whose component precisions come from an arbitrary `evolve`
    /// rule instead of the heat-flow closure. Used for negative controls.
    pub fn mixture_with(&self, s: f64, evolve: Evolution<'_>) -> Result<Mixture> {
        let mut precisions = Vec::with_capacity(self.cache.len());
        let mut log_dets = Vec::with_capacity(self.cache.len());
        for c in &self.cache {
            let p = evolve(c, self.beta, s)?;
            log_dets.push(p.log_det()?);
            precisions.push(p);
        }
        Mixture::new(Arc::clone(&self.centers), precisions, &log_dets)
    }

    pub fn log_density(&self, x: &[f64], s: f64) -> Result<f64> {
        self.mixture_at(s)?.log_density(x)
    }

    pub fn score(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        self.mixture_at(s)?.score(x)
    }

    /// `η̂⁻¹ Δη̂` at `(x, s)`.
    pub fn laplacian_ratio(&self, x: &[f64], s: f64) -> Result<f64> {
        Ok(self.mixture_at(s)?.evaluate(x)?.laplacian_ratio)
    }

    pub fn evaluate(&self, x: &[f64], s: f64) -> Result<Evaluation> {
        self.mixture_at(s)?.evaluate(x)
    }

    /// `U(x, t) = -β² log η̂(x, T - t)` for denoising time `t ∈ [0, T]`.
    pub fn potential_u(&self, x: &[f64], t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!(
                "denoising time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(-self.beta * self.beta * self.log_density(x, (self.horizon - t).max(0.0))?)
    }

    /// HJB residual with `∂ₜU` by central differences (step `fd_step`) and
    /// the spatial terms in closed form.
    pub fn hjb_residual(&self, x: &[f64], t: f64, fd_step: f64) -> Result<HjbResidual> {
        let heat_flow = |c: &CenterPrecision, beta: f64, s: f64| -> Result<SpdMatrix> {
            Ok(evolve_covariance(&c.covariance, beta, s)?.0)
        };
        self.hjb_residual_with(x, t, fd_step, &heat_flow)
    }

    /// HJB residual of the mixture family generated by `evolve`.
    pub fn hjb_residual_with(
        &self,
        x: &[f64],
        t: f64,
        fd_step: f64,
        evolve: Evolution<'_>,
    ) -> Result<HjbResidual> {
        if !(fd_step > 0.0) || t - fd_step < 0.0 || t + fd_step > self.horizon {
            return Err(Error::Domain(format!(
                "need fd_step > 0 and t ± fd_step within [0, {}], got t={t}, fd_step={fd_step}",
                self.horizon
            )));
        }
        let b2 = self.beta * self.beta;
        let t_hi = t + fd_step;
        let t_lo = t - fd_step;
        let u_hi = -b2
            * self
                .mixture_with((self.horizon - t_hi).max(0.0), evolve)?
                .log_density(x)?;
        let u_lo = -b2
            * self
                .mixture_with(self.horizon - t_lo, evolve)?
                .log_density(x)?;
        let dt_u = (u_hi - u_lo) / (2.0 * fd_step);

        let eval = self.mixture_with(self.horizon - t, evolve)?.evaluate(x)?;
        // ∇U = -β² ∇log η, ΔU = -β² Δ log η.
        let grad_u_sq = b2 * b2 * linalg::sq_norm(&eval.score);
        let lap_u = -b2 * eval.laplacian_log_density();
        Ok(HjbResidual {
            residual: -dt_u + 0.5 * grad_u_sq - 0.5 * b2 * lap_u,
            time_derivative: dt_u,
        })
    }

    /// `Γ` at an arbitrary point. The network provider evaluates there; the
    /// table provider returns the factor of the nearest center.
    pub fn precision_at(&self, z: &[f64]) -> Result<SpdMatrix> {
        ensure_dim(self.dim(), z.len())?;
        match &self.provider {
            PrecisionProvider::Mlp(_) => self.provider.precision(0, z),
            PrecisionProvider::Table(_) => {
                let nearest = (0..self.n_centers())
                    .min_by(|&a, &b| {
                        linalg::sq_dist(self.centers.row(a), z)
                            .total_cmp(&linalg::sq_dist(self.centers.row(b), z))
                    })
                    .expect("at least one center");
                Ok(self.cache[nearest].precision.clone())
            }
        }
    }
}

fn build_cache(
    centers: &Arc<Points>,
    provider: &PrecisionProvider,
) -> Result<(Vec<CenterPrecision>, Mixture)> {
    let cache = (0..centers.len())
        .map(|i| CenterPrecision::from_factor(provider.factor(i, centers.row(i))?))
        .collect::<Result<Vec<_>>>()?;
    let precisions = cache.iter().map(|c| c.precision.clone()).collect();
    let log_dets: Vec<f64> = cache.iter().map(|c| c.log_det).collect();
    let terminal = Mixture::new(Arc::clone(centers), precisions, &log_dets)?;
    Ok((cache, terminal))
}
