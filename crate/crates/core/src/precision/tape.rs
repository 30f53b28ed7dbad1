//! Minimal reverse-mode gradient tape.
//!
//! The vocabulary is closed: parameter slices, constant inputs, affine maps,
//! GeLU, the softplus Cholesky decode, a sum of squares, and two composite
//! losses (terminal implicit score matching over a Gaussian kernel mixture,
//! and weighted denoising regression). Each composite op carries its own
//! closed-form backward rule. Only parameter gradients are produced; spatial
//! derivatives of the score never go through the tape.

use std::f64::consts::PI;
use std::sync::Arc;

use super::activation::{sigmoid, softplus};
use super::mlp::{affine_backward, gelu_backward};
use super::DIAGONAL_FLOOR;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{packed_index, packed_len};
use crate::points::Points;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param {
        offset: usize,
    },
    Affine {
        input: Var,
        weight: usize,
        bias: usize,
    },
    Gelu {
        input: Var,
    },
    DecodeCholesky {
        input: Var,
        dim: usize,
    },
    SumSquares {
        input: Var,
    },
    KernelIsm {
        factors: Vec<Var>,
        centers: Arc<Points>,
        batch: Points,
    },
    WeightedRegression {
        preds: Vec<Var>,
        targets: Points,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Debug)]
pub struct GradTape {
    params: Vec<f64>,
    nodes: Vec<Node>,
}

impl GradTape {
    /// A tape over a snapshot of `params`.
    pub fn new(params: &[f64]) -> Self {
        Self {
            params: params.to_vec(),
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, offset: usize, len: usize) -> Var {
        let value = self.params[offset..offset + len].to_vec();
        self.push(Op::Param { offset }, value)
    }

    /// `W x + b` with `W` (`out_dim x len(x)`, row-major) at `weight` and `b` at `bias`.
    pub fn affine(&mut self, input: Var, weight: usize, bias: usize, out_dim: usize) -> Var {
        let x = &self.nodes[input.0].value;
        let fan_in = x.len();
        let mut out = self.params[bias..bias + out_dim].to_vec();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.params[weight + r * fan_in..weight + (r + 1) * fan_in];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(
            Op::Affine {
                input,
                weight,
                bias,
            },
            out,
        )
    }

    pub fn gelu(&mut self, input: Var) -> Var {
        let out = self.nodes[input.0]
            .value
            .iter()
            .map(|&x| super::activation::gelu(x))
            .collect();
        self.push(Op::Gelu { input }, out)
    }

    /// Raw packed entries to a packed Cholesky factor: diagonal slots through
    /// `softplus(u) + floor`, off-diagonal slots unchanged.
    pub fn decode_cholesky(&mut self, input: Var, dim: usize) -> Var {
        let out = decode_cholesky(dim, &self.nodes[input.0].value);
        self.push(Op::DecodeCholesky { input, dim }, out)
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s = self.nodes[input.0].value.iter().map(|v| v * v).sum();
        self.push(Op::SumSquares { input }, vec![s])
    }

    /// Terminal implicit score-matching loss of the kernel mixture whose
    /// per-center Cholesky factors are `factors`, averaged over `batch`.
    pub fn kernel_ism(
        &mut self,
        factors: &[Var],
        centers: Arc<Points>,
        batch: &Points,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        ensure_dim(centers.len(), factors.len())?;
        ensure_dim(centers.dim(), batch.dim())?;
        let dim = centers.dim();
        let values: Vec<&[f64]> = factors.iter().map(|v| self.value(*v)).collect();
        for v in &values {
            ensure_dim(packed_len(dim), v.len())?;
        }
        let (loss, _) = kernel_ism_eval(dim, &values, &centers, batch, None);
        Ok(self.push(
            Op::KernelIsm {
                factors: factors.to_vec(),
                centers,
                batch: batch.clone(),
            },
            vec![loss],
        ))
    }

    /// `(1/B) Σ_b w_b |pred_b - target_b|²`.
    pub fn weighted_regression(
        &mut self,
        preds: &[Var],
        targets: Points,
        weights: Vec<f64>,
    ) -> Result<Var> {
        ensure_dim(preds.len(), targets.len())?;
        ensure_dim(preds.len(), weights.len())?;
        if preds.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let mut loss = 0.0;
        for (b, p) in preds.iter().enumerate() {
            let pred = self.value(*p);
            ensure_dim(targets.dim(), pred.len())?;
            let sq: f64 = pred
                .iter()
                .zip(targets.row(b))
                .map(|(a, t)| (a - t) * (a - t))
                .sum();
            loss += weights[b] * sq;
        }
        loss /= preds.len() as f64;
        Ok(self.push(
            Op::WeightedRegression {
                preds: preds.to_vec(),
                targets,
                weights,
            },
            vec![loss],
        ))
    }

    /// Reverse pass from the most recently recorded node, which must be a
    /// scalar. Returns `loss_seed * ∂output/∂params`.
    pub fn backward(&self, loss_seed: f64) -> Result<Vec<f64>> {
        let out = self
            .nodes
            .last()
            .ok_or_else(|| Error::Contract("backward called before any forward pass".into()))?;
        if out.value.len() != 1 {
            return Err(Error::Contract("backward output must be a scalar".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        adj[self.nodes.len() - 1] = vec![loss_seed];

        for k in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut adj[k]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[k];
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (i, v) in g.iter().enumerate() {
                        grads[offset + i] += v;
                    }
                }
                Op::Affine {
                    input,
                    weight,
                    bias,
                } => {
                    let x = &self.nodes[input.0].value;
                    let slot = adjoint_slot(&mut adj, *input, x.len());
                    affine_backward(&self.params, *weight, x, &g, slot, &mut grads, *bias);
                }
                Op::Gelu { input } => {
                    let x = &self.nodes[input.0].value;
                    let slot = adjoint_slot(&mut adj, *input, x.len());
                    gelu_backward(x, &g, slot);
                }
                Op::DecodeCholesky { input, dim } => {
                    let raw = &self.nodes[input.0].value;
                    let slot = adjoint_slot(&mut adj, *input, raw.len());
                    for i in 0..*dim {
                        for j in 0..=i {
                            let p = packed_index(i, j);
                            slot[p] += if i == j { g[p] * sigmoid(raw[p]) } else { g[p] };
                        }
                    }
                }
                Op::SumSquares { input } => {
                    let x = &self.nodes[input.0].value;
                    let slot = adjoint_slot(&mut adj, *input, x.len());
                    for (a, v) in slot.iter_mut().zip(x) {
                        *a += 2.0 * v * g[0];
                    }
                }
                Op::KernelIsm {
                    factors,
                    centers,
                    batch,
                } => {
                    let dim = centers.dim();
                    let values: Vec<&[f64]> = factors.iter().map(|v| self.value(*v)).collect();
                    let (_, fgrads) = kernel_ism_eval(dim, &values, centers, batch, Some(g[0]));
                    for (v, fg) in factors.iter().zip(fgrads.expect("gradient requested")) {
                        let slot = adjoint_slot(&mut adj, *v, fg.len());
                        for (a, b) in slot.iter_mut().zip(&fg) {
                            *a += b;
                        }
                    }
                }
                Op::WeightedRegression {
                    preds,
                    targets,
                    weights,
                } => {
                    let scale = 2.0 * g[0] / preds.len() as f64;
                    for (b, p) in preds.iter().enumerate() {
                        let pred = &self.nodes[p.0].value;
                        let slot = adjoint_slot(&mut adj, *p, pred.len());
                        for ((a, pv), t) in slot.iter_mut().zip(pred).zip(targets.row(b)) {
                            *a += scale * weights[b] * (pv - t);
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn adjoint_slot(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    slot
}

pub(crate) fn decode_cholesky(dim: usize, raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    for i in 0..dim {
        let p = packed_index(i, i);
        out[p] = softplus(raw[p]) + DIAGONAL_FLOOR;
    }
    out
}

/// Loss `(1/B) Σ_b [2 π⁻¹Δπ(x_b) - |∇log π(x_b)|²]` of the normalized mixture
/// with precisions `Γ_i = L_i L_iᵀ`, and optionally `seed * ∂loss/∂L_i`.
///
/// Per point, with `u_i = x - Z_i`, `a_i = -Γ_i u_i`, log-weights
/// `y_i = -½ u_iᵀΓ_i u_i + ½ log det Γ_i - (d/2) log 2π - log N`, softmax `σ`,
/// `g = Σ σ_i a_i` and `q_i = |a_i|² - tr Γ_i`, the loss is `2 Σ σ_i q_i - |g|²`.
fn kernel_ism_eval(
    dim: usize,
    factors: &[&[f64]],
    centers: &Points,
    batch: &Points,
    seed: Option<f64>,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let n = centers.len();
    let d = dim;
    let log_n = (n as f64).ln();
    let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();

    // Per-center Γ (full), trace and log-normalizer.
    let mut gammas = vec![0.0; n * d * d];
    let mut traces = vec![0.0; n];
    let mut log_norms = vec![0.0; n];
    for (i, l) in factors.iter().enumerate() {
        let gm = &mut gammas[i * d * d..(i + 1) * d * d];
        for r in 0..d {
            for c in 0..=r {
                let mut acc = 0.0;
                for k in 0..=c {
                    acc += l[packed_index(r, k)] * l[packed_index(c, k)];
                }
                gm[r * d + c] = acc;
                gm[c * d + r] = acc;
            }
        }
        traces[i] = (0..d).map(|r| gm[r * d + r]).sum();
        let half_log_det: f64 = (0..d).map(|r| l[packed_index(r, r)].ln()).sum();
        log_norms[i] = half_log_det - half_log_2pi - log_n;
    }

    let mut loss = 0.0;
    // Unsymmetrized ∂loss/∂Γ_i and ∂loss/∂(½ log det Γ_i) accumulators.
    let mut d_gamma = seed.map(|_| vec![0.0; n * d * d]);
    let mut d_half_logdet = seed.map(|_| vec![0.0; n]);

    let mut u = vec![0.0; n * d];
    let mut a = vec![0.0; n * d];
    let mut y = vec![0.0; n];
    let mut g = vec![0.0; d];
    let scale = seed.unwrap_or(0.0) / batch.len() as f64;

    for x in batch.rows() {
        for i in 0..n {
            let z = centers.row(i);
            let gm = &gammas[i * d * d..(i + 1) * d * d];
            let ui = &mut u[i * d..(i + 1) * d];
            for k in 0..d {
                ui[k] = x[k] - z[k];
            }
            let ai = &mut a[i * d..(i + 1) * d];
            let mut quad = 0.0;
            for r in 0..d {
                let v: f64 = (0..d).map(|c| gm[r * d + c] * ui[c]).sum();
                ai[r] = -v;
                quad += ui[r] * v;
            }
            y[i] = -0.5 * quad + log_norms[i];
        }
        crate::linalg::softmax_in_place(&mut y);
        let sigma = &y;

        g.iter_mut().for_each(|v| *v = 0.0);
        let mut lap = 0.0;
        for i in 0..n {
            let ai = &a[i * d..(i + 1) * d];
            let q = ai.iter().map(|v| v * v).sum::<f64>() - traces[i];
            lap += sigma[i] * q;
            for k in 0..d {
                g[k] += sigma[i] * ai[k];
            }
        }
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        loss += 2.0 * lap - g_sq;

        if let (Some(dg), Some(dh)) = (d_gamma.as_mut(), d_half_logdet.as_mut()) {
            // c_i = ∂ℓ/∂σ_i, then softmax backward e_i = σ_i (c_i - Σ σ_j c_j).
            let mut c_bar = 0.0;
            let mut cs = vec![0.0; n];
            for i in 0..n {
                let ai = &a[i * d..(i + 1) * d];
                let q = ai.iter().map(|v| v * v).sum::<f64>() - traces[i];
                let ga: f64 = ai.iter().zip(&g).map(|(p, r)| p * r).sum();
                cs[i] = 2.0 * q - 2.0 * ga;
                c_bar += sigma[i] * cs[i];
            }
            for i in 0..n {
                let s = sigma[i];
                if s < 1e-300 {
                    continue;
                }
                let e = s * (cs[i] - c_bar) * scale;
                let ui = &u[i * d..(i + 1) * d];
                let ai = &a[i * d..(i + 1) * d];
                let dgi = &mut dg[i * d * d..(i + 1) * d * d];
                for r in 0..d {
                    // ∂ℓ/∂a_i = σ_i (4 a_i - 2 g); a_i = -Γ_i u_i contributes -(∂ℓ/∂a_i) u_iᵀ.
                    let ga_r = s * (4.0 * ai[r] - 2.0 * g[r]) * scale;
                    for c in 0..d {
                        dgi[r * d + c] -= 0.5 * e * ui[r] * ui[c] + ga_r * ui[c];
                    }
                    dgi[r * d + r] -= 2.0 * s * scale;
                }
                dh[i] += e;
            }
        }
    }
    loss /= batch.len() as f64;

    let grads = d_gamma.zip(d_half_logdet).map(|(dg, dh)| {
        (0..n)
            .map(|i| {
                let l = factors[i];
                let m = &dg[i * d * d..(i + 1) * d * d];
                let mut out = vec![0.0; packed_len(d)];
                // ∂ℓ/∂L = (M + Mᵀ) L, lower triangle.
                for r in 0..d {
                    for c in 0..=r {
                        let mut acc = 0.0;
                        for k in c..d {
                            acc += (m[r * d + k] + m[k * d + r]) * l[packed_index(k, c)];
                        }
                        out[packed_index(r, c)] = acc;
                    }
                    let p = packed_index(r, r);
                    out[p] += dh[i] / l[p];
                }
                out
            })
            .collect()
    });
    (loss, grads)
}
