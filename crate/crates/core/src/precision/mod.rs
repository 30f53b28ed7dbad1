//! Precision providers: maps from a kernel center to a Cholesky factor
//! `L(z)` of the local precision `Γ(z) = L(z) L(z)ᵀ`.
//!
//! Both providers emit `d(d+1)/2` raw numbers per query. Off-diagonal slots
//! are used as-is; diagonal slots go through `softplus(u) + 1e-6`, which
//! keeps every decoded factor (and therefore every `Γ`) nonsingular for any
//! finite parameters.

pub mod activation;
pub mod mlp;
pub mod tape;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use activation::{gelu, gelu_derivative, softplus, softplus_inverse};
pub use mlp::Mlp;
pub use tape::{GradTape, Var};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{cholesky_to_precision, packed_index, packed_len, LowerTriangular, SpdMatrix};
use crate::points::Points;

/// Additive floor on decoded Cholesky diagonals.
pub const DIAGONAL_FLOOR: f64 = 1e-6;

/// Noise time whose isotropic kernel the table provider starts from.
pub const TABLE_INIT_NOISE_TIME: f64 = 0.01;

/// Hidden layer widths of the default precision network.
pub const DEFAULT_HIDDEN: [usize; 5] = [64; 5];

/// One packed Cholesky factor per kernel center.
#[derive(Debug, Clone, PartialEq)]
pub struct TableProvider {
    dim: usize,
    params: Vec<f64>,
}

/// Network `ψ: R^d → R^{d(d+1)/2}` producing raw factor entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProvider {
    dim: usize,
    net: Mlp,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionProvider {
    Table(TableProvider),
    Mlp(MlpProvider),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Table,
    Mlp,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Table => "table",
            Self::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!("unknown provider kind '{other}'"))),
        }
    }
}

impl TableProvider {
    pub fn new(dim: usize, params: Vec<f64>) -> Result<Self> {
        let m = packed_len(dim);
        if dim == 0 || params.is_empty() || params.len() % m != 0 {
            return Err(Error::Config(format!(
                "table parameters must be a nonempty multiple of {m}"
            )));
        }
        Ok(Self { dim, params })
    }

    /// Every center decodes to `Γ = (β² s₀)⁻¹ I`.
    pub fn isotropic(dim: usize, n_centers: usize, precision: f64) -> Self {
        let diag_raw = softplus_inverse(precision.sqrt() - DIAGONAL_FLOOR);
        let m = packed_len(dim);
        let mut params = vec![0.0; n_centers * m];
        for c in 0..n_centers {
            for i in 0..dim {
                params[c * m + packed_index(i, i)] = diag_raw;
            }
        }
        Self { dim, params }
    }

    pub fn n_centers(&self) -> usize {
        self.params.len() / packed_len(self.dim)
    }

    fn raw(&self, index: usize) -> &[f64] {
        let m = packed_len(self.dim);
        &self.params[index * m..(index + 1) * m]
    }
}

impl MlpProvider {
    pub fn new(dim: usize, hidden: &[usize], params: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(packed_len(dim));
        let net = Mlp::new(widths)?;
        let params = match params {
            Some(p) => {
                ensure_dim(net.num_params(), p.len())?;
                p
            }
            None => net.init_params(&mut crate::rng::stream(seed, crate::rng::Stream::Init)),
        };
        Ok(Self { dim, net, params })
    }

    pub fn from_widths(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let net = Mlp::new(widths)?;
        let dim = net.input_dim();
        if net.output_dim() != packed_len(dim) {
            return Err(Error::Config(format!(
                "precision network must map {dim} -> {}, got widths {:?}",
                packed_len(dim),
                net.widths()
            )));
        }
        ensure_dim(net.num_params(), params.len())?;
        Ok(Self { dim, net, params })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl PrecisionProvider {
    /// Table provider for `n_centers` centers initialized near the isotropic
    /// kernel of noise time `s₀ = 0.01`: `Γ ≈ (β² s₀)⁻¹ I`.
    pub fn init_table(dim: usize, n_centers: usize, beta: f64) -> Self {
        Self::Table(TableProvider::isotropic(
            dim,
            n_centers,
            1.0 / (beta * beta * TABLE_INIT_NOISE_TIME),
        ))
    }

    /// Precision network with He-style uniform weights and zero biases.
    pub fn init_mlp(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        Ok(Self::Mlp(MlpProvider::new(dim, hidden, None, seed)?))
    }

    pub fn init(
        kind: ProviderKind,
        dim: usize,
        n_centers: usize,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        match kind {
            ProviderKind::Table => Ok(Self::init_table(dim, n_centers, beta)),
            ProviderKind::Mlp => Self::init_mlp(dim, &DEFAULT_HIDDEN, seed),
        }
    }

    pub fn kind(&self) -> ProviderKind {
        match self {
            Self::Table(_) => ProviderKind::Table,
            Self::Mlp(_) => ProviderKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Table(t) => t.dim,
            Self::Mlp(m) => m.dim,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Self::Table(t) => &t.params,
            Self::Mlp(m) => &m.params,
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Self::Table(t) => &mut t.params,
            Self::Mlp(m) => &mut m.params,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Checks that the provider can serve `n_centers` centers.
    pub fn check_centers(&self, n_centers: usize) -> Result<()> {
        match self {
            Self::Table(t) if t.n_centers() != n_centers => Err(Error::Config(format!(
                "table provider holds {} factors for {n_centers} centers",
                t.n_centers()
            ))),
            _ => Ok(()),
        }
    }

    /// Raw (pre-decode) packed entries for center `index` located at `z`.
    /// The table provider looks up by index; the network evaluates at `z`.
    pub fn raw_factor(&self, index: usize, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), z.len())?;
        let raw = match self {
            Self::Table(t) => {
                if index >= t.n_centers() {
                    return Err(Error::Domain(format!("center index {index} out of range")));
                }
                t.raw(index).to_vec()
            }
            Self::Mlp(m) => m.net.forward(&m.params, z)?,
        };
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite precision parameters".into()));
        }
        Ok(raw)
    }

    pub fn factor(&self, index: usize, z: &[f64]) -> Result<LowerTriangular> {
        let raw = self.raw_factor(index, z)?;
        LowerTriangular::new(self.dim(), tape::decode_cholesky(self.dim(), &raw))
    }

    /// `Γ(z) = L(z) L(z)ᵀ` for center `index` at `z`.
    pub fn precision(&self, index: usize, z: &[f64]) -> Result<SpdMatrix> {
        Ok(cholesky_to_precision(&self.factor(index, z)?))
    }

    /// Records the decoded factor of every center on `tape` (which must have
    /// been created over this provider's parameters).
    pub fn record(&self, tape: &mut GradTape, centers: &Points) -> Vec<Var> {
        let dim = self.dim();
        let m = packed_len(dim);
        (0..centers.len())
            .map(|i| {
                let raw = match self {
                    Self::Table(_) => tape.param(i * m, m),
                    Self::Mlp(p) => {
                        let z = tape.input(centers.row(i).to_vec());
                        p.net.record(tape, 0, z)
                    }
                };
                tape.decode_cholesky(raw, dim)
            })
            .collect()
    }

    /// Terminal ISM loss over `batch` recorded on a fresh tape.
    pub fn record_ism(&self, centers: &Arc<Points>, batch: &Points) -> Result<(GradTape, f64)> {
        let mut tape = GradTape::new(self.params());
        let factors = self.record(&mut tape, centers);
        let out = tape.kernel_ism(&factors, Arc::clone(centers), batch)?;
        let loss = tape.value(out)[0];
        Ok((tape, loss))
    }
}

/// Random lower-triangular raw parameters, handy for tests and checks.
pub fn random_table<R: Rng>(
    dim: usize,
    n_centers: usize,
    rng: &mut R,
    diag_scale: (f64, f64),
) -> TableProvider {
    let m = packed_len(dim);
    let mut params = vec![0.0; n_centers * m];
    for c in 0..n_centers {
        for i in 0..dim {
            for j in 0..=i {
                params[c * m + packed_index(i, j)] = if i == j {
                    softplus_inverse(rng.random_range(diag_scale.0..diag_scale.1))
                } else {
                    rng.random_range(-0.5..0.5)
                };
            }
        }
    }
    TableProvider { dim, params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_table_decodes_to_softplus_zero() {
        let p = PrecisionProvider::Table(TableProvider::new(2, vec![0.0; 3]).unwrap());
        let g = p.precision(0, &[0.0, 0.0]).unwrap();
        let l = 2f64.ln() + 1e-6;
        assert!((g.get(0, 0) - l * l).abs() < 1e-15);
        assert!((g.get(1, 1) - 0.480_453).abs() < 1e-5);
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn arbitrary_parameters_give_spd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let params: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = PrecisionProvider::Table(TableProvider::new(3, params).unwrap());
            let g = p.precision(0, &[0.0; 3]).unwrap();
            assert!(SpdMatrix::new(3, g.into_vec()).is_ok());
        }
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let p = PrecisionProvider::Table(TableProvider::new(1, vec![f64::NAN]).unwrap());
        assert!(p.precision(0, &[0.0]).is_err());
    }

    #[test]
    fn table_init_is_isotropic_kde() {
        let p = PrecisionProvider::init_table(2, 4, 1.0);
        for i in 0..4 {
            let g = p.precision(i, &[0.0, 0.0]).unwrap();
            assert!((g.get(0, 0) / 100.0 - 1.0).abs() < 0.01);
            assert!((g.get(1, 1) / 100.0 - 1.0).abs() < 0.01);
            assert_eq!(g.get(1, 0), 0.0);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = PrecisionProvider::init_mlp(2, &[8, 8], 5).unwrap();
        let b = PrecisionProvider::init_mlp(2, &[8, 8], 5).unwrap();
        let c = PrecisionProvider::init_mlp(2, &[8, 8], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let z = [0.3, -0.2];
        assert_eq!(a.precision(0, &z).unwrap(), b.precision(0, &z).unwrap());
    }

    #[test]
    fn mlp_init_off_diagonal_is_centered() {
        let vals: Vec<f64> = (0..100)
            .map(|seed| {
                PrecisionProvider::init_mlp(2, &DEFAULT_HIDDEN, seed)
                    .unwrap()
                    .raw_factor(0, &[0.0, 0.0])
                    .unwrap()[1]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std =
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        // Zero biases make the raw output exactly zero at z = 0.
        assert!(
            mean.abs() <= 0.1 * std || std == 0.0,
            "mean {mean} std {std}"
        );
    }

    #[test]
    fn zero_hidden_weights_give_constant_provider() {
        let PrecisionProvider::Mlp(mut m) = PrecisionProvider::init_mlp(2, &[16, 16], 1).unwrap()
        else {
            unreachable!()
        };
        let offsets = m.net.layer_offsets();
        let widths = m.net.widths().to_vec();
        for (k, (w_off, b_off)) in offsets.iter().enumerate().take(widths.len() - 2) {
            m.params[*w_off..w_off + widths[k] * widths[k + 1]]
                .iter_mut()
                .for_each(|v| *v = 0.0);
            m.params[*b_off..b_off + widths[k + 1]]
                .iter_mut()
                .for_each(|v| *v = 0.1);
        }
        let p = PrecisionProvider::Mlp(m);
        let g0 = p.precision(0, &[0.0, 0.0]).unwrap();
        for z in [[1.0, 2.0], [-3.0, 0.5]] {
            assert_eq!(p.precision(0, &z).unwrap(), g0);
        }
    }
}
