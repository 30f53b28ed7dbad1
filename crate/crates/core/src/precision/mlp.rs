//! Fully connected network with GeLU hidden layers and a linear output.
//!
//! Parameters live outside the network in one flat vector; layer `k` stores
//! its weight matrix (row-major, `out x in`) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{gelu, gelu_derivative};
use super::tape::{GradTape, Var};
use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// `(weight_offset, bias_offset)` of each layer.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let weight = off;
                let bias = off + w[0] * w[1];
                off = bias + w[1];
                (weight, bias)
            })
            .collect()
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for ((w_off, _), w) in self.layer_offsets().into_iter().zip(self.widths.windows(2)) {
            let bound = (6.0 / w[0] as f64).sqrt();
            for p in &mut params[w_off..w_off + w[0] * w[1]] {
                *p = rng.random_range(-bound..bound);
            }
        }
        params
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.num_params(), params.len())?;
        ensure_dim(self.input_dim(), input.len())?;
        let mut h = input.to_vec();
        let last = self.num_layers() - 1;
        for (k, ((w_off, b_off), w)) in self
            .layer_offsets()
            .into_iter()
            .zip(self.widths.windows(2))
            .enumerate()
        {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut next = params[b_off..b_off + fan_out].to_vec();
            for (r, out) in next.iter_mut().enumerate() {
                let row = &params[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                *out += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = gelu(*v));
            }
            h = next;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`, reading parameters from the tape's
    /// parameter block starting at `param_offset`.
    pub fn record(&self, tape: &mut GradTape, param_offset: usize, input: Var) -> Var {
        let mut h = input;
        let last = self.num_layers() - 1;
        for (k, ((w_off, b_off), w)) in self
            .layer_offsets()
            .into_iter()
            .zip(self.widths.windows(2))
            .enumerate()
        {
            h = tape.affine(h, param_offset + w_off, param_offset + b_off, w[1]);
            if k < last {
                h = tape.gelu(h);
            }
        }
        h
    }
}

/// Backward pass of one affine layer, used by the tape.
pub(crate) fn affine_backward(
    params: &[f64],
    w_off: usize,
    input: &[f64],
    out_adj: &[f64],
    in_adj: &mut [f64],
    grads: &mut [f64],
    b_off: usize,
) {
    let fan_in = input.len();
    for (r, &g) in out_adj.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads[b_off + r] += g;
        let row = w_off + r * fan_in;
        for c in 0..fan_in {
            grads[row + c] += g * input[c];
            in_adj[c] += g * params[row + c];
        }
    }
}

pub(crate) fn gelu_backward(input: &[f64], out_adj: &[f64], in_adj: &mut [f64]) {
    for ((a, &x), &g) in in_adj.iter_mut().zip(input).zip(out_adj) {
        *a += g * gelu_derivative(x);
    }
}
