//! Small dense Gaussian helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{PingError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factor, retrying with a growing diagonal jitter.
///
/// The jitter starts at `1e-10` times the mean diagonal and is capped at
/// `1e-6` times it.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Chol> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = m.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-6 * scale {
        let mut j = m.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            log::debug!("cholesky needed jitter {jitter:e}");
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(PingError::Numerical {
        iterations: 0,
        message: format!("matrix of order {} is not positive definite", m.nrows()),
    })
}

/// `log det` from a Cholesky factor.
pub fn log_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `log N(x | 0, Σ)` for several vectors sharing `Σ = L Lᵀ`.
pub fn mvn_logpdf(xs: &[DVector<f64>], chol: &Chol) -> f64 {
    let n = chol.l_dirty().nrows() as f64;
    let ld = log_det(chol);
    xs.iter()
        .map(|x| {
            let z = chol
                .l_dirty()
                .solve_lower_triangular(x)
                .expect("cholesky factor is nonsingular");
            -0.5 * (n * LN_2PI + ld + z.norm_squared())
        })
        .sum()
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(P⁻¹ b, P⁻¹)` given the Cholesky factor of the precision `P`.
pub fn draw_from_precision<R: Rng + ?Sized>(
    precision: &Chol,
    rhs: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = precision.solve(rhs);
    let z = standard_normal_vec(rhs.len(), rng);
    let offset = precision
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .expect("cholesky factor is nonsingular");
    mean + offset
}

/// Draw from `N(0, Σ)` given `Σ = L Lᵀ`.
pub fn draw_from_covariance<R: Rng + ?Sized>(chol: &Chol, rng: &mut R) -> DVector<f64> {
    let l = chol.l();
    let z = standard_normal_vec(l.nrows(), rng);
    l * z
}

/// Empirical quantile with linear interpolation, `p ∈ [0,1]`, of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logpdf_matches_univariate() {
        let cov = DMatrix::from_diagonal_element(1, 1, 4.0);
        let c = cholesky(&cov).unwrap();
        let x = DVector::from_element(1, 1.0);
        let expected = -0.5 * (LN_2PI + 4f64.ln() + 0.25);
        assert!((mvn_logpdf(&[x], &c) - expected).abs() < 1e-14);
    }

    #[test]
    fn precision_draw_moments() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = cholesky(&p).unwrap();
        let b = DVector::from_row_slice(&[1.0, -1.0]);
        let mean = p.clone().try_inverse().unwrap() * &b;
        let cov = p.try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let mut m = DVector::zeros(2);
        let mut s = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = draw_from_precision(&c, &b, &mut rng);
            m += &x;
            s += &x * x.transpose();
        }
        m /= n as f64;
        s = s / n as f64 - &m * m.transpose();
        assert!((m - mean).amax() < 0.02);
        assert!((s - cov).amax() < 0.02);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_element(3, 3, 1.0);
        assert!(cholesky(&m).is_ok());
        let neg = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(cholesky(&neg).is_err());
    }

    #[test]
    fn quantiles() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.125), 0.5);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }
}
