//! Terminal-time implicit score matching and the training loop.
//!
//! The loss only ever looks at the terminal density `π̂ = η̂(·, 0)`:
//! `L(θ) = mean_b [2 π̂⁻¹Δπ̂(x_b) - |∇ log π̂(x_b)|²]`. The closed-form heat
//! flow carries the learned precisions to every other noise level.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::io::format_g17;
use crate::kernel::KernelModel;
use crate::points::Points;
use crate::rng::{self, Stream};

/// `mean_b [2 π̂⁻¹Δπ̂(x_b) - |∇ log π̂(x_b)|²]` at noise time 0.
pub fn terminal_ism_loss(model: &KernelModel, batch: &Points) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    ensure_dim(model.dim(), batch.dim())?;
    let mix = model.terminal_mixture();
    let mut total = 0.0;
    for x in batch.rows() {
        let e = mix.evaluate(x)?;
        total += 2.0 * e.laplacian_ratio - crate::linalg::sq_norm(&e.score);
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient with respect to the provider parameters.
pub fn terminal_ism_loss_and_grad(model: &KernelModel, batch: &Points) -> Result<(f64, Vec<f64>)> {
    ensure_dim(model.dim(), batch.dim())?;
    let (tape, loss) = model.provider().record_ism(model.shared_centers(), batch)?;
    Ok((loss, tape.backward(1.0)?))
}

fn trapezoid(grid: &[f64], values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::Domain(
            "quadrature grid needs at least two nodes".into(),
        ));
    }
    let vals = values.collect::<Result<Vec<f64>>>()?;
    let mut total = 0.0;
    for k in 1..grid.len() {
        total += 0.5 * (grid[k] - grid[k - 1]) * (vals[k] + vals[k - 1]);
    }
    Ok(total)
}

fn require_1d(model: &KernelModel) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "quadrature oracles are one-dimensional, model has d={}",
            model.dim()
        )));
    }
    Ok(())
}

/// Explicit score-matching loss `∫ |∇log π̂ - ∇log π|² π dx` by trapezoid
/// quadrature on `grid`, for a known 1-D density and its score.
pub fn esm_loss_oracle(
    model: &KernelModel,
    density: impl Fn(f64) -> f64,
    true_score: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<f64> {
    require_1d(model)?;
    let mix = model.terminal_mixture();
    trapezoid(
        grid,
        grid.iter().map(|&x| {
            let diff = mix.score(&[x])?[0] - true_score(x);
            Ok(diff * diff * density(x))
        }),
    )
}

/// The population ISM objective `∫ (2 π̂⁻¹Δπ̂ - |∇log π̂|²) π dx` by
/// trapezoid quadrature; differs from the ESM loss by a θ-independent
/// constant.
pub fn ism_loss_quadrature(
    model: &KernelModel,
    density: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<f64> {
    require_1d(model)?;
    let mix = model.terminal_mixture();
    trapezoid(
        grid,
        grid.iter().map(|&x| {
            let e = mix.evaluate(&[x])?;
            Ok((2.0 * e.laplacian_ratio - e.score[0] * e.score[0]) * density(x))
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    ensure_dim(params.len(), grads.len())?;
    ensure_dim(params.len(), state.m.len())?;
    ensure_dim(params.len(), state.v.len())?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// `params ← params - lr · grads`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    ensure_dim(params.len(), grads.len())?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Optimizer with its state, shared by the kernel and DSM training loops.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        cfg: AdamConfig,
        state: AdamState,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => Self::Adam {
                lr,
                cfg: AdamConfig::default(),
                state: AdamState::new(n_params),
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self {
            Self::Sgd { lr } => sgd_step(params, grads, *lr),
            Self::Adam { lr, cfg, state } => adam_step(params, grads, state, *lr, cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Record (and checkpoint) every this many steps; 0 records only the end.
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            eval_every: 0,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    /// Minibatch loss at this step.
    pub loss: f64,
    /// Held-out negative log-likelihood, if a held-out set was given.
    pub nll: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<TrainRecord>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.history.last()
    }

    /// CSV with columns `step,loss,nll,seconds`; `nll` is empty when absent.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,loss,nll,seconds")?;
        for r in &self.history {
            let nll = r.nll.map(format_g17).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                r.step,
                format_g17(r.loss),
                nll,
                format_g17(r.seconds)
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Mean negative log-likelihood of `points` under the terminal density.
pub fn heldout_nll(model: &KernelModel, points: &Points) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("held-out set is empty".into()));
    }
    ensure_dim(model.dim(), points.dim())?;
    let mix = model.terminal_mixture();
    let mut total = 0.0;
    for x in points.rows() {
        total -= mix.log_density(x)?;
    }
    Ok(total / points.len() as f64)
}

/// Training points that do not coincide with a kernel center. At a center
/// the loss term `-2 tr Γ` can be driven to `-∞` by shrinking that kernel,
/// so those points carry no usable signal.
pub fn loss_points(data: &Points, centers: &Points) -> Points {
    let keys: HashSet<Vec<u64>> = centers
        .rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !keys.contains(&data.row(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect();
    data.select(&keep)
}

/// Draws `batch` indices in `0..m` with replacement.
pub(crate) fn draw_batch<R: Rng>(rng: &mut R, m: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..m)).collect()
}

/// Minimizes the terminal ISM loss over the provider parameters.
///
/// Each step draws a seeded minibatch (with replacement) from the training
/// points that are not kernel centers, backpropagates through the tape and
/// updates the parameters, which rebuilds the precision cache.
pub fn train(
    mut model: KernelModel,
    data: &Points,
    config: &TrainConfig,
    heldout: Option<&Points>,
) -> Result<(KernelModel, TrainReport)> {
    config.validate()?;
    ensure_dim(model.dim(), data.dim())?;
    let mut report = TrainReport::default();
    if config.steps == 0 {
        return Ok((model, report));
    }
    let pool = loss_points(data, model.centers());
    if pool.is_empty() {
        return Err(Error::Domain(
            "no training points away from the kernel centers".into(),
        ));
    }
    let centers: Arc<Points> = Arc::clone(model.shared_centers());
    let mut rng = rng::stream(config.seed, Stream::Batches);
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        model.provider().num_params(),
    );
    let mut params = model.provider().params().to_vec();
    let start = Instant::now();

    for step in 1..=config.steps {
        let indices = draw_batch(&mut rng, pool.len(), config.batch_size);
        let batch = pool.select(&indices);
        let (tape, loss) = model.provider().record_ism(&centers, &batch)?;
        let grads = tape.backward(1.0)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss {loss} on batch indices {indices:?}"),
            });
        }
        optimizer.step(&mut params, &grads)?;
        model.set_params(&params).map_err(|e| Error::NonFinite {
            step,
            detail: format!("parameter update failed ({e}) after batch indices {indices:?}"),
        })?;

        let record_now =
            step == config.steps || (config.eval_every > 0 && step % config.eval_every == 0);
        if record_now {
            let nll = heldout.map(|h| heldout_nll(&model, h)).transpose()?;
            report.history.push(TrainRecord {
                step,
                loss,
                nll,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(path) = &config.checkpoint_path {
                model.save(path)?;
            }
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::GroundTruthGmm;
    use crate::precision::{random_table, PrecisionProvider, TableProvider};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_points(n: usize, dim: usize, seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Points::new(dim, data).unwrap()
    }

    fn isotropic_single(dim: usize, gamma: f64) -> KernelModel {
        let provider = PrecisionProvider::Table(TableProvider::isotropic(dim, 1, gamma));
        KernelModel::new(
            Points::new(dim, vec![0.0; dim]).unwrap(),
            provider,
            1.0,
            1.0,
        )
        .unwrap()
    }

    fn random_model(dim: usize, n: usize, seed: u64) -> KernelModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let table = random_table(dim, n, &mut rng, (0.5, 2.0));
        KernelModel::new(
            Points::new(dim, centers).unwrap(),
            PrecisionProvider::Table(table),
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn standard_gaussian_loss_is_minus_d() {
        let model = isotropic_single(2, 1.0);
        let loss = terminal_ism_loss(&model, &gaussian_points(100_000, 2, 1)).unwrap();
        assert!((loss + 2.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn loss_at_center_is_closed_form() {
        let gamma = 3.0;
        let model = isotropic_single(3, gamma);
        let loss = terminal_ism_loss(&model, &Points::new(3, vec![0.0; 3]).unwrap()).unwrap();
        assert!((loss + 2.0 * 3.0 * gamma).abs() < 1e-4);
    }

    #[test]
    fn loss_matches_ism_form() {
        let model = random_model(2, 5, 3);
        let batch = gaussian_points(50, 2, 4);
        let direct = terminal_ism_loss(&model, &batch).unwrap();
        let mut ism = 0.0;
        for x in batch.rows() {
            let e = model.evaluate(x, 0.0).unwrap();
            ism += crate::linalg::sq_norm(&e.score) + 2.0 * e.laplacian_log_density();
        }
        ism /= batch.len() as f64;
        assert!((direct - ism).abs() < 1e-10);
        let (taped, _) = terminal_ism_loss_and_grad(&model, &batch).unwrap();
        assert!((taped - direct).abs() < 1e-10);
        assert!(terminal_ism_loss(&model, &Points::empty(2)).is_err());
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let model = random_model(2, 4, 5);
        let batch = gaussian_points(16, 2, 6);
        let reversed: Vec<usize> = (0..16).rev().collect();
        let a = terminal_ism_loss(&model, &batch).unwrap();
        let b = terminal_ism_loss(&model, &batch.select(&reversed)).unwrap();
        assert!((a - b).abs() < 1e-12);

        let perm = [2usize, 0, 3, 1];
        let params = model.provider().params();
        let mut permuted = Vec::new();
        for &i in &perm {
            permuted.extend_from_slice(&params[i * 3..(i + 1) * 3]);
        }
        let other = KernelModel::new(
            model.centers().select(&perm),
            PrecisionProvider::Table(TableProvider::new(2, permuted).unwrap()),
            1.0,
            1.0,
        )
        .unwrap();
        assert!((terminal_ism_loss(&other, &batch).unwrap() - a).abs() < 1e-12);
    }

    fn fd_check(model: &KernelModel, batch: &Points) {
        let (_, grads) = terminal_ism_loss_and_grad(model, batch).unwrap();
        let h = 1e-5;
        for k in 0..grads.len() {
            let mut plus = model.clone();
            plus.update_params(|p| p[k] += h).unwrap();
            let mut minus = model.clone();
            minus.update_params(|p| p[k] -= h).unwrap();
            let fd = (terminal_ism_loss(&plus, batch).unwrap()
                - terminal_ism_loss(&minus, batch).unwrap())
                / (2.0 * h);
            let err = (fd - grads[k]).abs() / grads[k].abs().max(1e-2);
            assert!(err < 1e-4, "param {k}: tape {} vs fd {fd}", grads[k]);
        }
    }

    #[test]
    fn table_gradient_matches_finite_differences() {
        fd_check(&random_model(2, 3, 7), &gaussian_points(8, 2, 8));
        fd_check(&random_model(3, 2, 9), &gaussian_points(5, 3, 10));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let provider = PrecisionProvider::init_mlp(2, &[6, 5], 11).unwrap();
        let centers = gaussian_points(3, 2, 12);
        let model = KernelModel::new(centers, provider, 1.0, 1.0).unwrap();
        fd_check(&model, &gaussian_points(8, 2, 13));
    }

    #[test]
    fn adam_examples() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, 0.1, &cfg).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);

        let mut q = vec![2.0, -1.0];
        let mut st = AdamState::new(2);
        st.m = vec![0.5, 0.5];
        st.v = vec![0.5, 0.5];
        adam_step(&mut q, &[0.0, 0.0], &mut st, 0.0, &cfg).unwrap();
        assert_eq!(q, vec![2.0, -1.0]);
        assert!((st.m[0] - 0.45).abs() < 1e-15 && (st.v[0] - 0.4995).abs() < 1e-15);
        assert!(adam_step(&mut q, &[0.0], &mut st, 0.1, &cfg).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut p, &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        sgd_step(&mut p, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        sgd_step(&mut p, &[2.0, -4.0], 0.25).unwrap();
        assert_eq!(p, vec![0.5, 3.0]);
    }

    /// Two-component 1-D ground truth and a wide quadrature grid.
    fn gmm_1d() -> (GroundTruthGmm, Vec<f64>) {
        use crate::datasets::GmmComponent;
        let gmm = GroundTruthGmm::new(&[
            GmmComponent {
                weight: 0.4,
                mean: vec![-1.0],
                cov: vec![0.3],
            },
            GmmComponent {
                weight: 0.6,
                mean: vec![1.2],
                cov: vec![0.5],
            },
        ])
        .unwrap();
        let grid = (0..=20_000)
            .map(|i| -12.0 + 24.0 * i as f64 / 20_000.0)
            .collect();
        (gmm, grid)
    }

    #[test]
    fn esm_is_zero_for_the_truth_and_nonnegative() {
        let (gmm, grid) = gmm_1d();
        let truth = isotropic_single(1, 1.0);
        let n = GroundTruthGmm::standard_normal(1);
        let zero = esm_loss_oracle(&truth, |x| n.pdf(&[x]), |x| n.score(&[x])[0], &grid).unwrap();
        assert!(zero.abs() < 1e-8, "{zero}");
        for seed in 0..5 {
            let m = random_model(1, 4, seed);
            assert!(
                esm_loss_oracle(&m, |x| gmm.pdf(&[x]), |x| gmm.score(&[x])[0], &grid).unwrap()
                    >= 0.0
            );
        }
        assert!(esm_loss_oracle(&random_model(2, 2, 0), |_| 1.0, |_| 0.0, &grid).is_err());
    }

    #[test]
    fn ism_and_esm_differ_by_a_constant() {
        let (gmm, grid) = gmm_1d();
        let offsets: Vec<f64> = (0..5)
            .map(|seed| {
                let m = random_model(1, 4, 100 + seed);
                let ism = ism_loss_quadrature(&m, |x| gmm.pdf(&[x]), &grid).unwrap();
                let esm =
                    esm_loss_oracle(&m, |x| gmm.pdf(&[x]), |x| gmm.score(&[x])[0], &grid).unwrap();
                ism - esm
            })
            .collect();
        let spread = offsets.iter().cloned().fold(f64::MIN, f64::max)
            - offsets.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-4, "{offsets:?}");
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let model = random_model(2, 3, 14);
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (out, report) = train(model.clone(), &gaussian_points(10, 2, 15), &cfg, None).unwrap();
        assert_eq!(out.provider(), model.provider());
        assert!(report.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = gaussian_points(200, 2, 16);
        let model = KernelModel::new(
            data.select(&[0, 1, 2, 3]),
            PrecisionProvider::init_table(2, 4, 1.0),
            1.0,
            1.0,
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 20,
            eval_every: 5,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (a, ra) = train(model.clone(), &data, &cfg, Some(&data)).unwrap();
        let (b, rb) = train(model, &data, &cfg, Some(&data)).unwrap();
        assert_eq!(a.provider(), b.provider());
        assert_eq!(ra.history.len(), 4);
        let steps: Vec<usize> = ra.history.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![5, 10, 15, 20]);
        assert_eq!(
            ra.history.iter().map(|r| r.loss).collect::<Vec<_>>(),
            rb.history.iter().map(|r| r.loss).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_center_recovers_identity_precision() {
        // Adam remembers the huge gradients of the Γ = 100 I start for a few
        // thousand steps, so 4000 steps still leaves Γ near 3.
        let data = gaussian_points(20_000, 2, 17);
        let model = KernelModel::new(
            Points::new(2, vec![0.0, 0.0]).unwrap(),
            PrecisionProvider::init_table(2, 1, 1.0),
            1.0,
            1.0,
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 12_000,
            batch_size: 256,
            learning_rate: 1e-2,
            seed: 18,
            ..TrainConfig::default()
        };
        let (model, _) = train(model, &data, &cfg, None).unwrap();
        let gamma = &model.center_precision(0).precision;
        let err = (0..2)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| (gamma.get(r, c) - if r == c { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.1, "{gamma:?}");
    }

    #[test]
    fn centers_are_excluded_from_loss_points() {
        let data = Points::new(1, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        let centers = Points::new(1, vec![1.0]).unwrap();
        assert_eq!(loss_points(&data, &centers).as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn report_csv_layout() {
        let report = TrainReport {
            history: vec![
                TrainRecord {
                    step: 1,
                    loss: -1.5,
                    nll: Some(2.0),
                    seconds: 0.25,
                },
                TrainRecord {
                    step: 2,
                    loss: -1.75,
                    nll: None,
                    seconds: 0.5,
                },
            ],
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,loss,nll,seconds\n1,-1.5,2,0.25\n2,-1.75,,0.5\n"
        );
    }
}
