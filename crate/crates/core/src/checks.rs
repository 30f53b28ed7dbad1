//! Self-checks of the closed-form machinery against independent oracles:
//! the HJB residual, finite-difference derivatives, the lifted network and
//! quadrature of the heat flow.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::baselines::{isotropic_kde, EmpiricalScore};
use crate::error::{Error, Result};
use crate::kernel::{evolve_precision, CenterPrecision, KernelModel};
use crate::lifted::{assemble, lifted_score};
use crate::linalg::{self, SpdMatrix};
use crate::points::Points;
use crate::precision::{random_table, PrecisionProvider};
use crate::rng::{self, Stream, StreamRng};
use crate::training::terminal_ism_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Hjb,
    Gradcheck,
    Equiv,
    Heat,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Hjb, Suite::Gradcheck, Suite::Equiv, Suite::Heat];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Hjb => "hjb",
            Suite::Gradcheck => "gradcheck",
            Suite::Equiv => "equiv",
            Suite::Heat => "heat",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown check suite `{s}`")))
    }
}

/// Parse a comma list of suite names; `all` expands to every suite.
pub fn parse_suites(list: &str) -> Result<Vec<Suite>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "all" {
            out.extend(Suite::ALL);
        } else {
            out.push(name.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no check suite selected".into()));
    }
    out.dedup();
    Ok(out)
}

/// One measured property: passes when `value < threshold` (or lies inside
/// `range` when set).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub suite: Suite,
    pub property: String,
    pub value: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    pub passed: bool,
}

impl CheckOutcome {
    fn below(suite: Suite, property: &str, value: f64, threshold: f64) -> Self {
        Self {
            suite,
            property: property.into(),
            value,
            threshold,
            range: None,
            passed: value < threshold,
        }
    }

    fn within(suite: Suite, property: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            suite,
            property: property.into(),
            value,
            threshold: hi,
            range: Some((lo, hi)),
            passed: (lo..=hi).contains(&value),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match self.range {
            Some((lo, hi)) => write!(
                f,
                "[{verdict}] {}/{}: {:.3e} in [{lo}, {hi}]",
                self.suite, self.property, self.value
            ),
            None => write!(
                f,
                "[{verdict}] {}/{}: {:.3e} < {:.1e}",
                self.suite, self.property, self.value, self.threshold
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Replace the heat-flow evolution by one running at twice the speed.
    /// A negative control: the HJB suite must then fail.
    pub corrupt_evolution: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            corrupt_evolution: false,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Hjb => {
            let r = hjb_sweep(opts.seed, 20, 1000, 1e-4, opts.corrupt_evolution)?;
            Ok(vec![
                CheckOutcome::below(suite, "max normalized residual", r.worst, 1e-4),
                CheckOutcome::within(suite, "step halving ratio", r.halving_ratio(), 3.0, 5.0),
            ])
        }
        Suite::Gradcheck => {
            let g = gradcheck(opts.seed, 100)?;
            Ok(vec![
                CheckOutcome::below(suite, "score vs FD log-density", g.score, 1e-5),
                CheckOutcome::below(suite, "laplacian ratio vs FD", g.laplacian, 1e-4),
                CheckOutcome::below(suite, "ISM tape gradient vs FD", g.ism_gradient, 1e-4),
            ])
        }
        Suite::Equiv => Ok(vec![
            CheckOutcome::below(
                suite,
                "lifted score vs kernel score",
                lifted_equivalence(opts.seed, 10, 1000)?,
                1e-10,
            ),
            CheckOutcome::below(
                suite,
                "empirical score vs isotropic KDE",
                early_stopping_bridge(opts.seed, 1000)?,
                1e-10,
            ),
        ]),
        Suite::Heat => Ok(vec![CheckOutcome::below(
            suite,
            "heat convolution vs evolved density",
            heat_closure(opts.seed, 50, &[0.1, 0.5, 1.0])?,
            1e-6,
        )]),
    }
}

pub fn run_suites(suites: &[Suite], opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &s in suites {
        out.extend(run_suite(s, opts)?);
    }
    Ok(out)
}

/// A model with `n` uniformly placed centers in `[-2, 2]^d` and random
/// Cholesky factors whose diagonal lies in `diag`.
pub fn random_model<R: Rng>(
    rng: &mut R,
    d: usize,
    n: usize,
    beta: f64,
    horizon: f64,
    diag: (f64, f64),
) -> Result<KernelModel> {
    let table = random_table(d, n, rng, diag);
    let centers = Points::new(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    KernelModel::new(centers, PrecisionProvider::Table(table), beta, horizon)
}

fn random_point<R: Rng>(rng: &mut R, d: usize, half_width: f64) -> Vec<f64> {
    (0..d)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect()
}

fn model_rng(seed: u64, index: u64) -> StreamRng {
    rng::indexed(seed, Stream::Checks, index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbSweep {
    /// Max normalized residual at `fd_step`.
    pub worst: f64,
    /// Max normalized residual at `fd_step / 2`.
    pub worst_half: f64,
}

impl HjbSweep {
    /// Near 4 for a second-order scheme.
    pub fn halving_ratio(&self) -> f64 {
        self.worst / self.worst_half
    }
}

/// Max normalized HJB residual of `n_models` random models (d ∈ {1,2,3},
/// N ≤ 8, β ∈ {0.5, 1, 2}) over `n_points` random `(x, t)` each.
pub fn hjb_sweep(
    seed: u64,
    n_models: usize,
    n_points: usize,
    fd_step: f64,
    corrupt: bool,
) -> Result<HjbSweep> {
    let wrong = |c: &CenterPrecision, beta: f64, s: f64| -> Result<SpdMatrix> {
        evolve_precision(&c.precision, beta, 2.0 * s)
    };
    let mut worst = 0.0f64;
    let mut worst_half = 0.0f64;
    for m in 0..n_models {
        let mut rng = model_rng(seed, m as u64);
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=8);
        let beta = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let model = random_model(&mut rng, d, n, beta, 1.0, (0.5, 2.0))?;
        for _ in 0..n_points {
            let x = random_point(&mut rng, d, 3.0);
            let t = rng.random_range(0.01..0.99);
            let res = |h: f64| {
                if corrupt {
                    model.hjb_residual_with(&x, t, h, &wrong)
                } else {
                    model.hjb_residual(&x, t, h)
                }
            };
            worst = worst.max(res(fd_step)?.normalized());
            worst_half = worst_half.max(res(0.5 * fd_step)?.normalized());
        }
    }
    Ok(HjbSweep { worst, worst_half })
}

/// Worst relative errors of closed-form derivatives against central
/// differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradcheck {
    /// `|s - s_fd| / |s_fd|` (Euclidean norms).
    pub score: f64,
    /// `|R - R_fd| / max(|R_fd|, 1)`: `R` crosses zero, so a unit floor.
    pub laplacian: f64,
    /// `|g - g_fd| / |g_fd|` over the full parameter vector.
    pub ism_gradient: f64,
}

pub fn gradcheck(seed: u64, n_points: usize) -> Result<Gradcheck> {
    let mut rng = model_rng(seed, 1000);
    let mut score = 0.0f64;
    let mut laplacian = 0.0f64;
    for k in 0..n_points {
        let d = 1 + k % 3;
        let model = random_model(&mut rng, d, 4, 1.0, 1.0, (0.5, 2.0))?;
        let x = random_point(&mut rng, d, 2.5);
        let s = rng.random_range(0.0..1.0);
        let mix = model.mixture_at(s)?;
        let logp = |y: &[f64]| mix.log_density(y);
        let eval = mix.evaluate(&x)?;

        let h1 = 1e-5;
        let h2 = 1e-4;
        let f0 = logp(&x)?;
        let mut fd_grad = vec![0.0; d];
        let mut fd_lap = 0.0;
        for i in 0..d {
            let mut y = x.clone();
            y[i] = x[i] + h1;
            let p1 = logp(&y)?;
            y[i] = x[i] - h1;
            let m1 = logp(&y)?;
            fd_grad[i] = (p1 - m1) / (2.0 * h1);
            y[i] = x[i] + h2;
            let p2 = logp(&y)?;
            y[i] = x[i] - h2;
            let m2 = logp(&y)?;
            fd_lap += (p2 - 2.0 * f0 + m2) / (h2 * h2);
        }
        let diff: Vec<f64> = eval
            .score
            .iter()
            .zip(&fd_grad)
            .map(|(a, b)| a - b)
            .collect();
        score = score.max(linalg::sq_norm(&diff).sqrt() / linalg::sq_norm(&fd_grad).sqrt());
        // π⁻¹Δπ = Δ log π + |∇ log π|².
        let fd_ratio = fd_lap + linalg::sq_norm(&fd_grad);
        laplacian =
            laplacian.max((eval.laplacian_ratio - fd_ratio).abs() / fd_ratio.abs().max(1.0));
    }

    let mut ism_gradient = 0.0f64;
    let mut params_checked = 0;
    let mut k = 0u64;
    while params_checked < n_points {
        let mut rng = model_rng(seed, 2000 + k);
        let d = 2;
        let model = if k % 2 == 0 {
            random_model(&mut rng, d, 6, 1.0, 1.0, (0.5, 2.0))?
        } else {
            let centers =
                Points::new(d, (0..6 * d).map(|_| rng.random_range(-2.0..2.0)).collect())?;
            KernelModel::new(
                centers,
                PrecisionProvider::init_mlp(d, &[8, 8], seed ^ k)?,
                1.0,
                1.0,
            )?
        };
        let batch = Points::new(
            d,
            (0..32 * d).map(|_| rng.random_range(-2.5..2.5)).collect(),
        )?;
        let (_, grad) = crate::training::terminal_ism_loss_and_grad(&model, &batch)?;
        let h = 1e-6;
        let base = model.provider().params().to_vec();
        let mut fd = vec![0.0; base.len()];
        let mut probe = model.clone();
        for (j, g) in fd.iter_mut().enumerate() {
            let mut p = base.clone();
            p[j] = base[j] + h;
            probe.set_params(&p)?;
            let up = terminal_ism_loss(&probe, &batch)?;
            p[j] = base[j] - h;
            probe.set_params(&p)?;
            let down = terminal_ism_loss(&probe, &batch)?;
            *g = (up - down) / (2.0 * h);
        }
        let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
        ism_gradient =
            ism_gradient.max(linalg::sq_norm(&diff).sqrt() / linalg::sq_norm(&fd).sqrt());
        params_checked += base.len();
        k += 1;
    }
    Ok(Gradcheck {
        score,
        laplacian,
        ism_gradient,
    })
}

/// Max abs difference between the lifted-network score and the kernel score.
pub fn lifted_equivalence(seed: u64, n_models: usize, n_points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for m in 0..n_models {
        let mut rng = model_rng(seed, 3000 + m as u64);
        let d = 1 + m % 3;
        let n = rng.random_range(1..=10);
        let model = random_model(&mut rng, d, n, 1.0, 1.0, (0.3, 3.0))?;
        let form = assemble(&model);
        for _ in 0..n_points {
            let x = random_point(&mut rng, d, 3.0);
            let a = model.score(&x, 0.0)?;
            let b = lifted_score(&form, &x)?;
            worst = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(worst, f64::max);
        }
    }
    Ok(worst)
}

/// Max abs difference between the empirical score at noise time `ε` and the
/// terminal score of the isotropic KDE with `Γ = (β²ε)⁻¹ I`.
pub fn early_stopping_bridge(seed: u64, n_points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for (k, (d, beta, eps)) in [(1, 1.0, 0.05), (2, 0.5, 0.1), (2, 2.0, 0.2), (3, 1.0, 0.3)]
        .into_iter()
        .enumerate()
    {
        let mut rng = model_rng(seed, 4000 + k as u64);
        let train = Points::new(
            d,
            (0..25 * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )?;
        let emp = EmpiricalScore::new(train.clone(), beta, 1.0)?;
        let kde = isotropic_kde(train, beta, eps, 1.0)?;
        for _ in 0..n_points / 4 {
            let x = random_point(&mut rng, d, 3.0);
            let a = emp.score(&x, eps)?;
            let b = kde.score(&x, 0.0)?;
            worst = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(worst, f64::max);
        }
    }
    Ok(worst)
}

/// Max abs error between `exp(log_density(x, s))` and trapezoid quadrature
/// of the heat kernel against the terminal density, in d = 1.
pub fn heat_closure(seed: u64, n_points: usize, times: &[f64]) -> Result<f64> {
    let mut rng = model_rng(seed, 5000);
    let model = random_model(&mut rng, 1, 4, 1.0, 1.0, (0.7, 2.0))?;
    let (lo, hi, m) = (-14.0, 14.0, 14001);
    let h = (hi - lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|k| lo + h * k as f64).collect();
    let terminal = model.terminal_mixture();
    let pi: Vec<f64> = grid
        .iter()
        .map(|&y| terminal.log_density(&[y]).map(f64::exp))
        .collect::<Result<_>>()?;
    let gamma = 0.5 * model.beta() * model.beta();
    let mut worst = 0.0f64;
    for &s in times {
        let evolved = model.mixture_at(s)?;
        for _ in 0..n_points {
            let x = rng.random_range(-3.0..3.0);
            let mut vals = Vec::with_capacity(m);
            for (&y, p) in grid.iter().zip(&pi) {
                vals.push(linalg::heat_kernel(gamma, s, &[x], &[y])? * p);
            }
            let conv = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1]));
            worst = worst.max((conv - evolved.log_density(&[x])?.exp()).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!(parse_suites("all").unwrap(), Suite::ALL.to_vec());
        assert_eq!(
            parse_suites("heat, hjb").unwrap(),
            vec![Suite::Heat, Suite::Hjb]
        );
        assert!(parse_suites("hjb,nope").is_err());
        assert!(parse_suites("").is_err());
    }

    #[test]
    fn fresh_build_passes_every_suite() {
        let outcomes = run_suites(&Suite::ALL, &CheckOptions::default()).unwrap();
        for o in &outcomes {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn corrupted_evolution_fails_hjb() {
        let opts = CheckOptions {
            seed: 3,
            corrupt_evolution: true,
        };
        let outcomes = run_suite(Suite::Hjb, &opts).unwrap();
        assert!(!outcomes[0].passed, "{}", outcomes[0]);
    }
}
