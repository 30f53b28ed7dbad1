//! Sampling: exact draws from a kernel model and Euler–Maruyama integration
//! of the reverse SDE `dX = β² ∇log η(X, s) dt + β dW`, run from `s = T` down
//! to `s = eps_stop`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{DsmScoreNet, EmpiricalScore};
use crate::error::{ensure_dim, Error, Result};
use crate::kernel::KernelModel;
use crate::linalg::Cholesky;
use crate::points::Points;
use crate::rng::{self, Stream, StreamRng};

/// The empirical score is singular at `s = 0`; sampling with it stops no
/// later than this noise time.
pub const EMPIRICAL_MIN_STOP: f64 = 1e-3;

/// Score evaluator frozen at one noise time.
pub type FrozenScore<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'a>;

/// `∇ log η(·, s)` for some model family.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn beta(&self) -> f64;
    fn horizon(&self) -> f64;

    /// Prepares evaluation at noise time `s`; per-time work (such as
    /// evolving precisions) happens here once.
    fn at(&self, s: f64) -> Result<FrozenScore<'_>>;

    fn score(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        self.at(s)?(x)
    }

    /// Smallest admissible `eps_stop` for reverse-SDE sampling.
    fn min_stop_time(&self) -> f64 {
        0.0
    }
}

impl ScoreField for KernelModel {
    fn dim(&self) -> usize {
        KernelModel::dim(self)
    }

    fn beta(&self) -> f64 {
        KernelModel::beta(self)
    }

    fn horizon(&self) -> f64 {
        KernelModel::horizon(self)
    }

    fn at(&self, s: f64) -> Result<FrozenScore<'_>> {
        let mix = self.mixture_at(s)?;
        Ok(Box::new(move |x| mix.score(x)))
    }
}

impl ScoreField for EmpiricalScore {
    fn dim(&self) -> usize {
        EmpiricalScore::dim(self)
    }

    fn beta(&self) -> f64 {
        EmpiricalScore::beta(self)
    }

    fn horizon(&self) -> f64 {
        EmpiricalScore::horizon(self)
    }

    fn at(&self, s: f64) -> Result<FrozenScore<'_>> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "empirical score is singular at noise time 0, got s={s}"
            )));
        }
        Ok(Box::new(move |x| EmpiricalScore::score(self, x, s)))
    }

    fn min_stop_time(&self) -> f64 {
        EMPIRICAL_MIN_STOP
    }
}

impl ScoreField for DsmScoreNet {
    fn dim(&self) -> usize {
        DsmScoreNet::dim(self)
    }

    fn beta(&self) -> f64 {
        DsmScoreNet::beta(self)
    }

    fn horizon(&self) -> f64 {
        DsmScoreNet::horizon(self)
    }

    fn at(&self, s: f64) -> Result<FrozenScore<'_>> {
        Ok(Box::new(move |x| DsmScoreNet::score(self, x, s)))
    }
}

/// Gaussian score `-x / (1 + β² s)` of `N(0, I)` under the heat flow.
#[derive(Debug, Clone, Copy)]
pub struct StandardGaussianField {
    pub dim: usize,
    pub beta: f64,
    pub horizon: f64,
}

impl ScoreField for StandardGaussianField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn at(&self, s: f64) -> Result<FrozenScore<'_>> {
        let scale = 1.0 / (1.0 + self.beta * self.beta * s);
        Ok(Box::new(move |x| {
            Ok(x.iter().map(|v| -v * scale).collect())
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeConfig {
    pub n_steps: usize,
    /// Integration stops at noise time `eps_stop`.
    pub eps_stop: f64,
    pub seed: u64,
}

impl SdeConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(0.0..horizon).contains(&self.eps_stop) {
            return Err(Error::Config(format!(
                "eps_stop must lie in [0, {horizon}), got {}",
                self.eps_stop
            )));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` exact draws from the terminal mixture: a uniform center `Z_i` plus
/// a `N(0, Γ(Z_i)⁻¹)` offset.
pub fn sample_direct<R: Rng>(model: &KernelModel, n: usize, rng: &mut R) -> Points {
    let d = model.dim();
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let i = rng.random_range(0..model.n_centers());
        let z = gaussian_vec(rng, d);
        let sqrt = &model.center_precision(i).sampling_factor;
        let center = model.centers().row(i);
        for r in 0..d {
            let off: f64 = (r..d).map(|c| sqrt[r * d + c] * z[c]).sum();
            out.push(center[r] + off);
        }
    }
    Points::new(d, out).expect("rows have model dimension")
}

/// Exact draws from the evolved mixture `η̂(·, T)`, components
/// `N(Z_i, Γ(Z_i)⁻¹ + β² T I)`.
pub fn init_from_prior<R: Rng>(model: &KernelModel, n: usize, rng: &mut R) -> Result<Points> {
    let d = model.dim();
    let widen = model.beta() * model.beta() * model.horizon();
    let factors = model
        .center_precisions()
        .iter()
        .map(|c| {
            let mut cov = c.covariance.as_slice().to_vec();
            for k in 0..d {
                cov[k * d + k] += widen;
            }
            Cholesky::factor(d, &cov)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let i = rng.random_range(0..model.n_centers());
        push_gaussian(&mut out, model.centers().row(i), &factors[i], rng);
    }
    Points::new(d, out)
}

/// Moment-matched prior `N(m̂, Ĉ + β² T I)` from training samples, for
/// score fields without a closed-form `η(·, T)`.
pub fn init_from_moments<R: Rng>(
    train: &Points,
    beta: f64,
    horizon: f64,
    n: usize,
    rng: &mut R,
) -> Result<Points> {
    if train.len() < 2 {
        return Err(Error::Domain(
            "moment matching needs at least two samples".into(),
        ));
    }
    let d = train.dim();
    let mean = train.mean();
    let mut cov = train.covariance();
    for k in 0..d {
        cov[k * d + k] += beta * beta * horizon;
    }
    let chol = Cholesky::factor(d, &cov)?;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        push_gaussian(&mut out, &mean, &chol, rng);
    }
    Points::new(d, out)
}

fn push_gaussian<R: Rng>(out: &mut Vec<f64>, mean: &[f64], chol: &Cholesky, rng: &mut R) {
    let d = mean.len();
    let z = gaussian_vec(rng, d);
    let l = chol.lower();
    for r in 0..d {
        let off: f64 = (0..=r).map(|c| l[r * d + c] * z[c]).sum();
        out.push(mean[r] + off);
    }
}

/// Left-endpoint Euler–Maruyama for the reverse SDE with uniform steps
/// `Δt = (T - eps_stop) / n_steps`:
/// `X ← X + β² field(X, s_k) Δt + β √Δt ξ` with `s_k = T - k Δt`.
///
/// Each trajectory owns a noise stream derived from `(seed, index)`, so the
/// output does not depend on thread scheduling.
pub fn sample_reverse_sde<F: ScoreField + ?Sized>(
    field: &F,
    init: &Points,
    cfg: &SdeConfig,
) -> Result<Points> {
    let horizon = field.horizon();
    cfg.validate(horizon)?;
    if cfg.eps_stop < field.min_stop_time() {
        return Err(Error::Config(format!(
            "this score field needs eps_stop >= {}, got {}",
            field.min_stop_time(),
            cfg.eps_stop
        )));
    }
    let d = field.dim();
    ensure_dim(d, init.dim())?;
    let beta = field.beta();
    let dt = (horizon - cfg.eps_stop) / cfg.n_steps as f64;
    let drift_scale = beta * beta * dt;
    let noise_scale = beta * dt.sqrt();

    let mut state = init.as_slice().to_vec();
    let mut rngs: Vec<StreamRng> = (0..init.len())
        .map(|j| rng::indexed(cfg.seed, Stream::Sampling, j as u64))
        .collect();

    for k in 0..cfg.n_steps {
        let s = horizon - k as f64 * dt;
        let score = field.at(s)?;
        state
            .par_chunks_mut(d.max(1))
            .zip(rngs.par_iter_mut())
            .try_for_each(|(x, rng)| -> Result<()> {
                let g = score(x)?;
                for (xi, gi) in x.iter_mut().zip(&g) {
                    let xi_noise: f64 = StandardNormal.sample(rng);
                    *xi += drift_scale * gi + noise_scale * xi_noise;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        step: k,
                        detail: "reverse SDE state left the finite range".into(),
                    });
                }
                Ok(())
            })?;
    }
    Points::new(d, state)
}
