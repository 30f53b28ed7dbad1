use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Exact GeLU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `d/dx [x Φ(x)] = Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus, the logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        let g = gelu(10.0);
        assert!(g > 9.999 && g <= 10.0, "{g}");
        assert!(gelu(-10.0).abs() < 1e-20);
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..100 {
            let x: f64 = rng.random_range(-6.0..6.0);
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softplus_round_trip() {
        for &y in &[1e-3, 0.5, 1.0, 10.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!((sigmoid(0.3) - (softplus(0.3 + 1e-6) - softplus(0.3 - 1e-6)) / 2e-6).abs() < 1e-9);
    }
}
