//! The terminal kernel score rewritten as a shallow softmax network.
//!
//! With features `T(x) = [x⊗x; x]` the log-weights of the terminal mixture are
//! affine, `y(x) = A T(x) + b`, and the score is `∇y(x) σ(y(x))`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{ensure_dim, Result};
use crate::kernel::KernelModel;
use crate::linalg::{self, SpdMatrix};
use crate::points::Points;

/// `[x⊗x; x]` with `x_i x_j` at index `i·d + j`.
pub fn lift(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(d * d + d);
    for &xi in x {
        out.extend(x.iter().map(|&xj| xi * xj));
    }
    out.extend_from_slice(x);
    out
}

#[derive(Debug, Clone)]
pub struct LiftedForm {
    dim: usize,
    /// `N × (d² + d)`, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub centers: Arc<Points>,
    pub precisions: Vec<SpdMatrix>,
}

/// Build `A` and `b` from the model's current terminal precisions. Rebuild
/// after every parameter update.
pub fn assemble(model: &KernelModel) -> LiftedForm {
    let d = model.dim();
    let n = model.n_centers();
    let width = d * d + d;
    let log_n = (n as f64).ln();
    let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();
    let mut a = Vec::with_capacity(n * width);
    let mut b = Vec::with_capacity(n);
    let mut precisions = Vec::with_capacity(n);
    for (i, z) in model.centers().rows().enumerate() {
        let cp = model.center_precision(i);
        let gamma = &cp.precision;
        a.extend(gamma.as_slice().iter().map(|&g| -0.5 * g));
        a.extend(gamma.mul_vec(z));
        b.push(-0.5 * gamma.quad_form(z) + 0.5 * cp.log_det - half_log_2pi - log_n);
        precisions.push(gamma.clone());
    }
    LiftedForm {
        dim: d,
        a,
        b,
        centers: Arc::clone(model.shared_centers()),
        precisions,
    }
}

impl LiftedForm {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `A T(x) + b`.
    pub fn log_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, x.len())?;
        let t = lift(x);
        Ok(self
            .a
            .chunks_exact(t.len())
            .zip(&self.b)
            .map(|(row, &bi)| linalg::dot(row, &t) + bi)
            .collect())
    }

    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.log_weights(x)?;
        linalg::softmax_in_place(&mut y);
        Ok(y)
    }
}

/// `Σ_i σ_i(x) (-Γ_i (x - Z_i))`.
pub fn lifted_score(form: &LiftedForm, x: &[f64]) -> Result<Vec<f64>> {
    let w = form.weights(x)?;
    let mut out = vec![0.0; form.dim];
    let mut u = vec![0.0; form.dim];
    for ((wi, z), gamma) in w.iter().zip(form.centers.rows()).zip(&form.precisions) {
        for ((ui, xi), zi) in u.iter_mut().zip(x).zip(z) {
            *ui = xi - zi;
        }
        for (o, g) in out.iter_mut().zip(gamma.mul_vec(&u)) {
            *o -= wi * g;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::{random_table, PrecisionProvider, TableProvider};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, d: usize, n: usize) -> KernelModel {
        let table = random_table(d, n, rng, (0.3, 3.0));
        let centers =
            Points::new(d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        KernelModel::new(centers, PrecisionProvider::Table(table), 1.0, 1.0).unwrap()
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift(&[1.0, 2.0]), vec![1.0, 2.0, 2.0, 4.0, 1.0, 2.0]);
        assert_eq!(lift(&[0.0, 0.0, 0.0]), vec![0.0; 12]);
        let x = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (p, q) = (lift(&x), lift(&neg));
        assert_eq!(p[..9], q[..9]);
        assert!(p[9..].iter().zip(&q[9..]).all(|(a, b)| *a == -b));
    }

    #[test]
    fn single_standard_center() {
        let model = KernelModel::new(
            Points::new(2, vec![0.0, 0.0]).unwrap(),
            PrecisionProvider::Table(TableProvider::isotropic(2, 1, 1.0)),
            1.0,
            1.0,
        )
        .unwrap();
        let form = assemble(&model);
        let expect = [-0.5, 0.0, 0.0, -0.5, 0.0, 0.0];
        assert!(form
            .a
            .iter()
            .zip(expect)
            .all(|(a, e)| (a - e).abs() < 1e-12));
        assert!((form.b[0] + (2.0 * PI).ln()).abs() < 1e-12);
        let s = lifted_score(&form, &[0.7, -1.3]).unwrap();
        assert!((s[0] + 0.7).abs() < 1e-12 && (s[1] - 1.3).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_has_zero_score_at_origin() {
        let model = KernelModel::new(
            Points::new(1, vec![-1.0, 1.0]).unwrap(),
            PrecisionProvider::Table(TableProvider::isotropic(1, 2, 2.0)),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(lifted_score(&assemble(&model), &[0.0]).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn log_weights_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=3 {
            let model = random_model(&mut rng, d, 7);
            let form = assemble(&model);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let direct = model.terminal_mixture().log_weights(&x).unwrap();
                let lifted = form.log_weights(&x).unwrap();
                let err = direct
                    .iter()
                    .zip(&lifted)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-12, "d={d} err={err}");
                let sd = model.terminal_mixture().weights(&x).unwrap();
                let sl = form.weights(&x).unwrap();
                assert!(sd.iter().zip(&sl).all(|(a, b)| (a - b).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn score_matches_kernel_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in 1..=3 {
            let model = random_model(&mut rng, d, 9);
            let form = assemble(&model);
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let a = model.score(&x, 0.0).unwrap();
                let b = lifted_score(&form, &x).unwrap();
                assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
            }
        }
    }

    #[test]
    fn permuting_centers_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = random_model(&mut rng, 2, 4);
        let perm = [2usize, 0, 3, 1];
        let per = model.provider().params().len() / 4;
        let params = model.provider().params();
        let factors: Vec<f64> = perm
            .iter()
            .flat_map(|&i| params[i * per..(i + 1) * per].to_vec())
            .collect();
        let permuted = KernelModel::new(
            model.centers().select(&perm),
            PrecisionProvider::Table(TableProvider::new(2, factors).unwrap()),
            1.0,
            1.0,
        )
        .unwrap();
        let (f, g) = (assemble(&model), assemble(&permuted));
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(g.a[k * 6..(k + 1) * 6], f.a[i * 6..(i + 1) * 6]);
            assert_eq!(g.b[k], f.b[i]);
        }
    }
}
