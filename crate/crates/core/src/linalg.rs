//! Dense small-matrix routines: SPD matrices, packed Cholesky factors, the
//! heat kernel and log-space reductions.
//!
//! Matrices are row-major `Vec<f64>` of side `dim`; `dim` is a runtime value
//! and is expected to stay small (at most a few dozen).

use std::f64::consts::PI;

use crate::error::{ensure_dim, Error, Result};

/// Symmetric positive definite matrix, stored full and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

/// Lower-triangular factor with positive diagonal, packed row by row:
/// entry `(i, j)` with `j <= i` lives at `i * (i + 1) / 2 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    packed: Vec<f64>,
}

/// Number of packed entries of a `dim x dim` lower-triangular matrix.
pub const fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
pub const fn packed_index(row: usize, col: usize) -> usize {
    row * (row + 1) / 2 + col
}

impl SpdMatrix {
    /// Validates symmetry (to 1e-12 relative) and positive definiteness.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim(dim * dim, data.len())?;
        if dim == 0 {
            return Err(Error::Domain("matrix dimension must be at least 1".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd);
        }
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in 0..i {
                if (data[i * dim + j] - data[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(Error::NotSpd);
                }
            }
        }
        let m = Self { dim, data };
        m.cholesky()?;
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = scale;
        }
        Self { dim, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            data[i * dim + i] = v;
        }
        Self::new(dim, data)
    }

    /// Skips validation; callers guarantee the invariant by construction.
    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self.dim, &self.data)
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(self.cholesky()?.log_det())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(self.dim, &self.data, v)
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        quad_form(self.dim, &self.data, v)
    }
}

impl LowerTriangular {
    pub fn new(dim: usize, packed: Vec<f64>) -> Result<Self> {
        ensure_dim(packed_len(dim), packed.len())?;
        if dim == 0 {
            return Err(Error::Domain("matrix dimension must be at least 1".into()));
        }
        if packed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite Cholesky entry".into()));
        }
        for i in 0..dim {
            let d = packed[packed_index(i, i)];
            if d <= 0.0 {
                return Err(Error::Domain(format!(
                    "Cholesky diagonal entry {i} is {d}, must be positive"
                )));
            }
        }
        Ok(Self { dim, packed })
    }

    /// Builds from a full row-major matrix, reading only the lower triangle.
    pub fn from_full(dim: usize, full: &[f64]) -> Result<Self> {
        ensure_dim(dim * dim, full.len())?;
        let mut packed = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            packed.extend_from_slice(&full[i * dim..i * dim + i + 1]);
        }
        Self::new(dim, packed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col > row {
            0.0
        } else {
            self.packed[packed_index(row, col)]
        }
    }

    /// Full row-major copy.
    pub fn to_full(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                out[i * d + j] = self.packed[packed_index(i, j)];
            }
        }
        out
    }

    /// The same factor viewed as a Cholesky factorization of `L Lᵀ`.
    pub fn to_cholesky(&self) -> Cholesky {
        Cholesky {
            dim: self.dim,
            lower: self.to_full(),
        }
    }

    /// `log det(L Lᵀ) = 2 Σ log L_ii`.
    pub fn log_det_product(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.packed[packed_index(i, i)].ln())
            .sum::<f64>()
    }
}

/// `Γ = L Lᵀ`.
pub fn cholesky_to_precision(factor: &LowerTriangular) -> SpdMatrix {
    let d = factor.dim;
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += factor.get(i, k) * factor.get(j, k);
            }
            out[i * d + j] = acc;
            out[j * d + i] = acc;
        }
    }
    SpdMatrix::from_raw(d, out)
}

/// Cholesky factorization `M = L Lᵀ` of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(dim: usize, m: &[f64]) -> Result<Self> {
        ensure_dim(dim * dim, m.len())?;
        let mut l = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut diag = m[j * dim + j];
            for k in 0..j {
                diag -= l[j * dim + k] * l[j * dim + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotSpd);
            }
            let ljj = diag.sqrt();
            l[j * dim + j] = ljj;
            for i in j + 1..dim {
                let mut v = m[i * dim + j];
                for k in 0..j {
                    v -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = v / ljj;
            }
        }
        Ok(Self { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn to_lower_triangular(&self) -> LowerTriangular {
        LowerTriangular::from_full(self.dim, &self.lower)
            .expect("Cholesky factor has positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut v = b[i];
            for k in 0..i {
                v -= self.lower[i * d + k] * b[k];
            }
            b[i] = v / self.lower[i * d + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in (0..d).rev() {
            let mut v = b[i];
            for k in i + 1..d {
                v -= self.lower[k * d + i] * b[k];
            }
            b[i] = v / self.lower[i * d + i];
        }
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        self.backward_solve(&mut x);
        x
    }

    /// `M⁻¹`, symmetrized.
    pub fn inverse(&self) -> SpdMatrix {
        let d = self.dim;
        let mut inv = vec![0.0; d * d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.forward_solve(&mut col);
            self.backward_solve(&mut col);
            for i in 0..d {
                inv[i * d + j] = col[i];
            }
        }
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (inv[i * d + j] + inv[j * d + i]);
                inv[i * d + j] = avg;
                inv[j * d + i] = avg;
            }
        }
        SpdMatrix::from_raw(d, inv)
    }
}

pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    Ok(m.cholesky()?.inverse())
}

pub fn spd_solve(m: &SpdMatrix, v: &[f64]) -> Result<Vec<f64>> {
    ensure_dim(m.dim, v.len())?;
    Ok(m.cholesky()?.solve(v))
}

/// Heat kernel `G_{γ,t}(y, y') = (4πγt)^{-d/2} exp(-|y - y'|² / (4γt))`,
/// the Green's function of `∂ₜu = γΔu`.
pub fn heat_kernel(gamma: f64, t: f64, y: &[f64], y2: &[f64]) -> Result<f64> {
    Ok(log_heat_kernel(gamma, t, y, y2)?.exp())
}

pub fn log_heat_kernel(gamma: f64, t: f64, y: &[f64], y2: &[f64]) -> Result<f64> {
    if !(gamma > 0.0) || !(t > 0.0) {
        return Err(Error::Domain(format!(
            "heat kernel needs gamma > 0 and t > 0, got gamma={gamma}, t={t}"
        )));
    }
    ensure_dim(y.len(), y2.len())?;
    let d = y.len() as f64;
    let var4 = 4.0 * gamma * t;
    Ok(-0.5 * d * (PI * var4).ln() - sq_dist(y, y2) / var4)
}

/// `log Σ exp(v_i)` with max-shift. Exactly `-inf` iff every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty vector".into()));
    }
    Ok(lse_nonempty(v))
}

#[inline]
pub(crate) fn lse_nonempty(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Overwrites `v` with `softmax(v)` and returns `log Σ exp(v_i)`.
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let lse = lse_nonempty(v);
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mat_vec(dim: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|i| dot(&m[i * dim..(i + 1) * dim], v))
        .collect()
}

#[inline]
pub fn quad_form(dim: usize, m: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        acc += v[i] * dot(&m[i * dim..(i + 1) * dim], v);
    }
    acc
}

pub fn mat_mul(dim: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            for j in 0..dim {
                out[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    out
}
