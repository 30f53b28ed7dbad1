//! Baselines: the empirical heat-kernel score (which memorizes), the
//! isotropic KDE family produced by early stopping, and a time-conditioned
//! network trained by denoising score matching.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::io::to_json_g17;
use crate::kernel::KernelModel;
use crate::linalg;
use crate::persist::check_schema;
use crate::points::Points;
use crate::precision::{GradTape, Mlp, PrecisionProvider, TableProvider, DEFAULT_HIDDEN};
use crate::rng::{self, Stream};
use crate::training::{draw_batch, Optimizer, TrainConfig, TrainRecord, TrainReport};

/// Smallest noise time drawn by the DSM objective.
pub const DSM_MIN_NOISE_TIME: f64 = 1e-3;

/// Score of the training set blurred by the heat flow:
/// `∇ log (G_{β²/2,s} * π̂)(x)` with `π̂` the empirical measure.
#[derive(Debug, Clone)]
pub struct EmpiricalScore {
    train: Arc<Points>,
    beta: f64,
    horizon: f64,
}

impl EmpiricalScore {
    pub fn new(train: Points, beta: f64, horizon: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Domain(
                "empirical score needs at least one training point".into(),
            ));
        }
        if !(beta > 0.0) || !(horizon > 0.0) {
            return Err(Error::Domain("beta and horizon must be positive".into()));
        }
        Ok(Self {
            train: Arc::new(train),
            beta,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn train(&self) -> &Points {
        &self.train
    }

    /// `-Σ_i w_i(x) (x - Z_i) / (β² s)` with `w = softmax(-|x - Z_i|² / (2β² s))`.
    /// Singular at `s = 0`.
    pub fn score(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "empirical score is singular at noise time 0, got s={s}"
            )));
        }
        ensure_dim(self.dim(), x.len())?;
        let var = self.beta * self.beta * s;
        let mut y: Vec<f64> = self
            .train
            .rows()
            .map(|z| -linalg::sq_dist(x, z) / (2.0 * var))
            .collect();
        linalg::softmax_in_place(&mut y);
        let mut out = vec![0.0; x.len()];
        for (w, z) in y.iter().zip(self.train.rows()) {
            if *w == 0.0 {
                continue;
            }
            for ((o, xi), zi) in out.iter_mut().zip(x).zip(z) {
                *o -= w * (xi - zi) / var;
            }
        }
        Ok(out)
    }
}

/// Kernel model with `Γ = (β² ε)⁻¹ I` at every training point: the
/// empirical density after early stopping at noise time `ε`.
pub fn isotropic_kde(train: Points, beta: f64, eps: f64, horizon: f64) -> Result<KernelModel> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "early-stopping time must be positive, got {eps}"
        )));
    }
    let provider = TableProvider::isotropic(train.dim(), train.len(), 1.0 / (beta * beta * eps));
    KernelModel::new(train, PrecisionProvider::Table(provider), beta, horizon)
}

/// Time-conditioned score network `(x, s) ↦ R^d` with input `[x, s/T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmScoreNet {
    net: Mlp,
    params: Vec<f64>,
    beta: f64,
    horizon: f64,
}

impl DsmScoreNet {
    pub fn new(dim: usize, hidden: &[usize], beta: f64, horizon: f64, seed: u64) -> Result<Self> {
        let mut widths = vec![dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let net = Mlp::new(widths)?;
        let params = net.init_params(&mut rng::stream(seed, Stream::Init));
        Self::from_parts(net, params, beta, horizon)
    }

    pub fn with_default_hidden(dim: usize, beta: f64, horizon: f64, seed: u64) -> Result<Self> {
        Self::new(dim, &DEFAULT_HIDDEN, beta, horizon, seed)
    }

    fn from_parts(net: Mlp, params: Vec<f64>, beta: f64, horizon: f64) -> Result<Self> {
        if net.output_dim() + 1 != net.input_dim() {
            return Err(Error::Config(format!(
                "score network must map d+1 -> d, got widths {:?}",
                net.widths()
            )));
        }
        ensure_dim(net.num_params(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite network parameters".into()));
        }
        if !(beta > 0.0) || !(horizon > 0.0) {
            return Err(Error::Domain("beta and horizon must be positive".into()));
        }
        Ok(Self {
            net,
            params,
            beta,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim(self.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite network parameters".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn input(&self, x: &[f64], s: f64) -> Vec<f64> {
        let mut input = x.to_vec();
        input.push(s / self.horizon);
        input
    }

    pub fn score(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), x.len())?;
        self.net.forward(&self.params, &self.input(x, s))
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_g17(&DsmDocument {
            schema_version: crate::persist::SCHEMA_VERSION,
            kind: "dsm".into(),
            d: self.dim(),
            beta: self.beta,
            horizon: self.horizon,
            widths: self.net.widths().to_vec(),
            parameters: self.params.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DsmDocument = serde_json::from_str(text)?;
        check_schema(doc.schema_version)?;
        if doc.kind != "dsm" {
            return Err(Error::Config(format!(
                "expected a dsm document, got kind '{}'",
                doc.kind
            )));
        }
        let net = Mlp::new(doc.widths)?;
        if net.output_dim() != doc.d {
            return Err(Error::Config(format!("widths do not match d={}", doc.d)));
        }
        Self::from_parts(net, doc.parameters, doc.beta, doc.horizon)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DsmDocument {
    schema_version: u32,
    kind: String,
    d: usize,
    beta: f64,
    horizon: f64,
    widths: Vec<usize>,
    parameters: Vec<f64>,
}

/// One realization of the DSM noise for a batch of clean points:
/// `y = Y0 + β √s ξ`, regression target `-(y - Y0)/(β² s)`, weight `β² s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmBatch {
    pub noisy: Points,
    pub times: Vec<f64>,
    pub targets: Points,
    pub weights: Vec<f64>,
}

impl DsmBatch {
    /// Draws `s ~ U[s_min, T]` and `ξ ~ N(0, I)` per clean point.
    pub fn draw<R: Rng>(clean: &Points, beta: f64, horizon: f64, rng: &mut R) -> Result<Self> {
        if clean.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if horizon <= DSM_MIN_NOISE_TIME {
            return Err(Error::Domain(format!(
                "horizon must exceed {DSM_MIN_NOISE_TIME}"
            )));
        }
        let d = clean.dim();
        let mut noisy = Vec::with_capacity(clean.len() * d);
        let mut targets = Vec::with_capacity(clean.len() * d);
        let mut times = Vec::with_capacity(clean.len());
        let mut weights = Vec::with_capacity(clean.len());
        for y0 in clean.rows() {
            let s = rng.random_range(DSM_MIN_NOISE_TIME..horizon);
            let sd = beta * s.sqrt();
            for &c in y0 {
                let xi: f64 = StandardNormal.sample(rng);
                noisy.push(c + sd * xi);
                targets.push(-xi / sd);
            }
            times.push(s);
            weights.push(beta * beta * s);
        }
        Ok(Self {
            noisy: Points::new(d, noisy)?,
            times,
            targets: Points::new(d, targets)?,
            weights,
        })
    }

    /// Weighted regression loss of an arbitrary score function on this draw.
    pub fn loss_with(&self, mut score: impl FnMut(&[f64], f64) -> Result<Vec<f64>>) -> Result<f64> {
        let mut total = 0.0;
        for b in 0..self.times.len() {
            let pred = score(self.noisy.row(b), self.times[b])?;
            total += self.weights[b] * linalg::sq_dist(&pred, self.targets.row(b));
        }
        Ok(total / self.times.len() as f64)
    }
}

/// DSM loss of `net` on `batch`, with its parameter gradient.
pub fn dsm_loss_and_grad(net: &DsmScoreNet, batch: &DsmBatch) -> Result<(f64, Vec<f64>)> {
    ensure_dim(net.dim(), batch.noisy.dim())?;
    let mut tape = GradTape::new(&net.params);
    let preds: Vec<_> = (0..batch.times.len())
        .map(|b| {
            let input = tape.input(net.input(batch.noisy.row(b), batch.times[b]));
            net.net.record(&mut tape, 0, input)
        })
        .collect();
    let out = tape.weighted_regression(&preds, batch.targets.clone(), batch.weights.clone())?;
    let loss = tape.value(out)[0];
    Ok((loss, tape.backward(1.0)?))
}

/// DSM loss of `net` on clean points `clean` with fresh noise from `rng`.
pub fn dsm_loss<R: Rng>(net: &DsmScoreNet, clean: &Points, rng: &mut R) -> Result<f64> {
    ensure_dim(net.dim(), clean.dim())?;
    let batch = DsmBatch::draw(clean, net.beta, net.horizon, rng)?;
    batch.loss_with(|y, s| net.score(y, s))
}

/// Trains `net` by DSM with the same loop shape as the kernel trainer.
/// The report's `nll` column is always empty.
pub fn train_dsm(
    mut net: DsmScoreNet,
    data: &Points,
    config: &TrainConfig,
) -> Result<(DsmScoreNet, TrainReport)> {
    config.validate()?;
    ensure_dim(net.dim(), data.dim())?;
    let mut report = TrainReport::default();
    if config.steps == 0 {
        return Ok((net, report));
    }
    if data.is_empty() {
        return Err(Error::Domain("no training data".into()));
    }
    let mut batch_rng = rng::stream(config.seed, Stream::Batches);
    let mut noise_rng = rng::stream(config.seed, Stream::Noise);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, net.params.len());
    let mut params = net.params.clone();
    let start = Instant::now();
    for step in 1..=config.steps {
        let indices = draw_batch(&mut batch_rng, data.len(), config.batch_size);
        let batch = DsmBatch::draw(
            &data.select(&indices),
            net.beta,
            net.horizon,
            &mut noise_rng,
        )?;
        let (loss, grads) = dsm_loss_and_grad(&net, &batch)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss {loss} on batch indices {indices:?}"),
            });
        }
        optimizer.step(&mut params, &grads)?;
        net.set_params(&params).map_err(|e| Error::NonFinite {
            step,
            detail: format!("{e} after batch indices {indices:?}"),
        })?;
        if step == config.steps || (config.eval_every > 0 && step % config.eval_every == 0) {
            report.history.push(TrainRecord {
                step,
                loss,
                nll: None,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(path) = &config.checkpoint_path {
                net.save(path)?;
            }
        }
    }
    Ok((net, report))
}
