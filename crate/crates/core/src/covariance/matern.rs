//! Matérn covariance in the spatial domain and the quasi-Matérn lattice spectrum.
//!
//! The spatial correlation uses the scaled argument `3 (h / φ) √ν` inside the
//! Bessel function, so `φ` is *not* the textbook Matérn range: correlation
//! has mostly decayed by `h ≈ φ`, independent of `ν`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::bessel_k;
use crate::error::{param_err, Result};
use crate::grid::GridSpec;

/// `θ = (σ², τ², φ, ν)`: nugget, partial sill, range, smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nugget_var: f64,
    pub partial_sill: f64,
    pub range: f64,
    pub smoothness: f64,
}

/// `θ' = (ϑ², ζ², φ, ν)` with `ϑ² = σ² + τ²` and `ζ² = τ² / ϑ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReparamMaternParams {
    pub total_var: f64,
    pub spatial_frac: f64,
    pub range: f64,
    pub smoothness: f64,
}

fn check_shape(range: f64, smoothness: f64) -> Result<()> {
    if !(range.is_finite() && range > 0.0) {
        return param_err(format!("range must be finite and > 0, got {range}"));
    }
    if !(smoothness.is_finite() && smoothness > 0.0) {
        return param_err(format!("smoothness must be finite and > 0, got {smoothness}"));
    }
    Ok(())
}

impl MaternParams {
    pub fn new(nugget_var: f64, partial_sill: f64, range: f64, smoothness: f64) -> Result<Self> {
        let p = Self {
            nugget_var,
            partial_sill,
            range,
            smoothness,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget_var.is_finite() && self.nugget_var >= 0.0) {
            return param_err(format!("nugget variance must be >= 0, got {}", self.nugget_var));
        }
        if !(self.partial_sill.is_finite() && self.partial_sill >= 0.0) {
            return param_err(format!("partial sill must be >= 0, got {}", self.partial_sill));
        }
        check_shape(self.range, self.smoothness)
    }

    pub fn total_var(&self) -> f64 {
        self.nugget_var + self.partial_sill
    }

    pub fn reparameterize(&self) -> Result<ReparamMaternParams> {
        let total = self.total_var();
        if total <= 0.0 {
            return param_err("total variance must be > 0 to reparameterize");
        }
        Ok(ReparamMaternParams {
            total_var: total,
            spatial_frac: self.partial_sill / total,
            range: self.range,
            smoothness: self.smoothness,
        })
    }

    /// Spatial covariance at separation `h`.
    pub fn covariance_at(&self, h: f64) -> Result<f64> {
        let nugget = if h == 0.0 { self.nugget_var } else { 0.0 };
        if self.partial_sill == 0.0 {
            if !(h.is_finite() && h >= 0.0) {
                return param_err(format!("distance must be >= 0, got {h}"));
            }
            return Ok(nugget);
        }
        Ok(nugget + self.partial_sill * matern_correlation(h, self.smoothness, self.range)?)
    }
}

impl ReparamMaternParams {
    pub fn new(total_var: f64, spatial_frac: f64, range: f64, smoothness: f64) -> Result<Self> {
        let p = Self {
            total_var,
            spatial_frac,
            range,
            smoothness,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_var.is_finite() && self.total_var > 0.0) {
            return param_err(format!("total variance must be > 0, got {}", self.total_var));
        }
        if !(0.0..=1.0).contains(&self.spatial_frac) {
            return param_err(format!("spatial fraction must lie in [0,1], got {}", self.spatial_frac));
        }
        check_shape(self.range, self.smoothness)
    }

    pub fn dereparameterize(&self) -> MaternParams {
        MaternParams {
            nugget_var: self.total_var * (1.0 - self.spatial_frac),
            partial_sill: self.total_var * self.spatial_frac,
            range: self.range,
            smoothness: self.smoothness,
        }
    }

    /// `logit(ζ)` where `ζ = sqrt(ζ²)`; the sampled coordinate.
    pub fn logit_zeta(&self) -> f64 {
        let z = self.spatial_frac.sqrt();
        (z / (1.0 - z)).ln()
    }

    /// Inverse of [`Self::logit_zeta`], returning `ζ²`.
    pub fn spatial_frac_from_logit(u: f64) -> f64 {
        let z = 1.0 / (1.0 + (-u).exp());
        z * z
    }
}

/// `M_ν(h/φ) = 2^{1-ν}/Γ(ν) · x^ν K_ν(x)` with `x = 3 (h/φ) √ν`.
pub fn matern_correlation(h: f64, smoothness: f64, range: f64) -> Result<f64> {
    check_shape(range, smoothness)?;
    if !(h.is_finite() && h >= 0.0) {
        return param_err(format!("distance must be finite and >= 0, got {h}"));
    }
    if h == 0.0 {
        return Ok(1.0);
    }
    let nu = smoothness;
    let x = 3.0 * (h / range) * nu.sqrt();
    if x < 1e-12 {
        return Ok(1.0);
    }
    if x > 700.0 {
        return Ok(0.0);
    }
    let k = bessel_k(nu, x)?;
    if k == 0.0 {
        return Ok(0.0);
    }
    let log_m = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() + k.ln();
    Ok(log_m.exp().min(1.0))
}

/// `σ² 1{v = v'} + τ² M_ν(‖v - v'‖ / φ)`.
pub fn matern_covariance(v: &[f64], w: &[f64], theta: &MaternParams) -> Result<f64> {
    if v.len() != w.len() {
        return Err(crate::error::PingError::Dimension(format!(
            "points of dimension {} and {}",
            v.len(),
            w.len()
        )));
    }
    theta.validate()?;
    let h = v
        .iter()
        .zip(w)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    theta.covariance_at(h)
}

/// Powered-exponential correlation `exp{-(h/ρ)^ν}`.
pub fn powered_exponential(h: f64, range: f64, power: f64) -> f64 {
    (-(h / range).powf(power)).exp()
}

/// Lattice spectral shape `[1/φ² + h(ω)]^{-ν-d/2}` given precomputed `h(ω)`.
fn spectral_shape(hw: f64, range: f64, smoothness: f64, d: usize) -> f64 {
    (1.0 / (range * range) + hw).powf(-smoothness - d as f64 / 2.0)
}

fn check_frequency(omega: &[f64]) -> Result<()> {
    const TOL: f64 = 1e-12;
    for &w in omega {
        if !(w.is_finite() && (-TOL..=2.0 * std::f64::consts::PI + TOL).contains(&w)) {
            return param_err(format!("frequency {w} outside [0, 2π]"));
        }
    }
    Ok(())
}

/// `λ(ω|θ) = σ² + τ² [1/φ² + Σ sin²(ω_j/2)]^{-ν-d/2}` with `d = ω.len()`.
pub fn quasi_matern_density(omega: &[f64], theta: &MaternParams) -> Result<f64> {
    theta.validate()?;
    check_frequency(omega)?;
    let hw: f64 = omega.iter().map(|w| (w / 2.0).sin().powi(2)).sum();
    Ok(theta.nugget_var
        + theta.partial_sill * spectral_shape(hw, theta.range, theta.smoothness, omega.len()))
}

fn is_zero_or_pi(w: f64) -> bool {
    const TOL: f64 = 1e-9;
    let pi = std::f64::consts::PI;
    w.abs() < TOL || (w - pi).abs() < TOL || (w - 2.0 * pi).abs() < TOL
}

/// `λ̃(ω|θ)`: half of `λ(ω|θ)` when every coordinate is 0 or π.
pub fn adjusted_spectral_variance(omega: &[f64], theta: &MaternParams) -> Result<f64> {
    let lambda = quasi_matern_density(omega, theta)?;
    Ok(if omega.iter().all(|&w| is_zero_or_pi(w)) {
        lambda / 2.0
    } else {
        lambda
    })
}

/// Per-frequency `sin²(ω_j/2)` sums for every DFT frequency of `grid`.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    h: Vec<f64>,
    self_conjugate: Vec<bool>,
    ndim: usize,
}

impl FrequencyTable {
    pub fn new(grid: &GridSpec) -> Self {
        let per_axis: Vec<Vec<f64>> = grid
            .dims()
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|k| (std::f64::consts::PI * k as f64 / n as f64).sin().powi(2))
                    .collect()
            })
            .collect();
        let h = (0..grid.len())
            .map(|i| {
                let c = grid.coords(i);
                (0..grid.ndim()).map(|a| per_axis[a][c[a]]).sum()
            })
            .collect();
        let self_conjugate = (0..grid.len()).map(|i| grid.is_self_conjugate(i)).collect();
        Self {
            h,
            self_conjugate,
            ndim: grid.ndim(),
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn is_self_conjugate(&self, idx: usize) -> bool {
        self.self_conjugate[idx]
    }

    /// `λ̃(ω|θ)` at every lattice frequency.
    pub fn adjusted_variances(&self, theta: &MaternParams) -> Vec<f64> {
        let exponent = -theta.smoothness - self.ndim as f64 / 2.0;
        let inv_r2 = 1.0 / (theta.range * theta.range);
        self.h
            .iter()
            .zip(&self.self_conjugate)
            .map(|(&hw, &sc)| {
                let lambda = theta.nugget_var + theta.partial_sill * (inv_r2 + hw).powf(exponent);
                if sc {
                    lambda / 2.0
                } else {
                    lambda
                }
            })
            .collect()
    }

    /// Unit-total-variance shape `λ̃(ω|θ)/ϑ²`, i.e. `(1-ζ²) + ζ² s(ω)` with halving.
    pub fn standardized_variances(&self, theta: &ReparamMaternParams) -> Vec<f64> {
        let unit = ReparamMaternParams {
            total_var: 1.0,
            ..*theta
        };
        self.adjusted_variances(&unit.dereparameterize())
    }
}

/// `λ̃(ω|θ)` for every frequency of `grid`.
pub fn spectral_variances(grid: &GridSpec, theta: &MaternParams) -> Vec<f64> {
    FrequencyTable::new(grid).adjusted_variances(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn correlation_at_zero_is_one() {
        for &(nu, phi) in &[(0.3, 1.0), (1.0, 10.0), (4.5, 0.2)] {
            assert_eq!(matern_correlation(0.0, nu, phi).unwrap(), 1.0);
        }
    }

    #[test]
    fn correlation_reference_values() {
        // ν = 1/2 reduces to exp(-3 h √ν / φ).
        let expected = 0.119_873_250_103_762_03;
        assert!(rel(matern_correlation(1.0, 0.5, 1.0).unwrap(), expected) < 1e-12);
        assert!(rel((-3.0 * 0.5f64.sqrt()).exp(), expected) < 1e-12);
        assert!(rel(matern_correlation(1.0, 1.0, 10.0).unwrap(), 0.916_797_610_037_197_5) < 1e-10);
        assert!(rel(matern_correlation(1.0, 2.0, 2.0).unwrap(), 0.474_246_427_019_672_23) < 1e-10);
        let c1 = matern_correlation(1.0, 1.0, 1.0).unwrap();
        let c2 = matern_correlation(2.0, 1.0, 1.0).unwrap();
        assert!(rel(c1, 0.120_469_293_384_582_55) < 1e-10);
        assert!(rel(c2, 0.008_063_518_306_413_053) < 1e-10);
        assert!(c2 < c1);
    }

    #[test]
    fn correlation_rejects_bad_params() {
        assert!(matern_correlation(1.0, 0.0, 1.0).is_err());
        assert!(matern_correlation(1.0, 1.0, -1.0).is_err());
        assert!(matern_correlation(1.0, f64::NAN, 1.0).is_err());
        assert!(matern_correlation(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        let th = MaternParams::new(0.5, 0.5, 10.0, 1.0).unwrap();
        assert_eq!(matern_covariance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &th).unwrap(), 1.0);
        let nug = MaternParams::new(1.0, 0.0, 10.0, 1.0).unwrap();
        assert_eq!(matern_covariance(&[0.0, 0.0], &[1.0, 0.0], &nug).unwrap(), 0.0);
        let th = MaternParams::new(0.0, 1.0, 10.0, 1.0).unwrap();
        let c = matern_covariance(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &th).unwrap();
        assert_eq!(c, matern_correlation(1.0, 1.0, 10.0).unwrap());
    }

    #[test]
    fn quasi_matern_examples() {
        let th = MaternParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(quasi_matern_density(&[0.0; 3], &th).unwrap(), 1.0);
        let v = quasi_matern_density(&[PI; 3], &th).unwrap();
        assert!((v - 0.03125).abs() < 1e-15);
        let white = MaternParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        for w in [[0.0, 0.3, 1.0], [PI, 2.0, 6.0]] {
            assert_eq!(quasi_matern_density(&w, &white).unwrap(), 1.0);
        }
        assert!(quasi_matern_density(&[7.0, 0.0, 0.0], &th).is_err());
    }

    #[test]
    fn adjusted_variance_halving() {
        let th = MaternParams::new(0.1, 1.0, 2.0, 1.0).unwrap();
        let full0 = quasi_matern_density(&[0.0; 3], &th).unwrap();
        assert_eq!(adjusted_spectral_variance(&[0.0; 3], &th).unwrap(), full0 / 2.0);
        let fullpi = quasi_matern_density(&[PI, 0.0, 0.0], &th).unwrap();
        assert_eq!(adjusted_spectral_variance(&[PI, 0.0, 0.0], &th).unwrap(), fullpi / 2.0);
        let w = [2.0 * PI / 8.0, 0.0, 0.0];
        assert_eq!(
            adjusted_spectral_variance(&w, &th).unwrap(),
            quasi_matern_density(&w, &th).unwrap()
        );
    }

    #[test]
    fn table_matches_pointwise() {
        let g = GridSpec::new(&[4, 5, 6]).unwrap();
        let th = MaternParams::new(0.2, 0.7, 1.5, 0.8).unwrap();
        let table = spectral_variances(&g, &th);
        for i in 0..g.len() {
            let w = g.frequency(i);
            let direct = adjusted_spectral_variance(&w[..3], &th).unwrap();
            assert!(rel(table[i], direct) < 1e-13);
        }
        let argmax = table
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // λ is maximised at ω = 0 (the halving does not move the maximum here).
        let raw: Vec<f64> = (0..g.len())
            .map(|i| quasi_matern_density(&g.frequency(i)[..3], &th).unwrap())
            .collect();
        let raw_max = raw.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(raw[0], raw_max);
        assert!(argmax < g.len());
    }

    #[test]
    fn powered_exponential_product_identity() {
        // K^q equals the same kernel with range ρ q^{-1/ν}.
        for &(rho, nu) in &[(2.0, 1.0), (5.0, 1.5), (0.7, 0.5)] {
            for q in 1..6 {
                let eff = rho * (q as f64).powf(-1.0 / nu);
                for &h in &[0.0, 0.3, 1.0, 2.5, 7.0] {
                    let lhs = powered_exponential(h, rho, nu).powi(q);
                    let rhs = powered_exponential(h, eff, nu);
                    assert!((lhs - rhs).abs() <= 1e-14 * rhs.max(1e-300) + 1e-300);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn reparam_round_trip(s2 in 0.0f64..10.0, t2 in 1e-3f64..10.0, phi in 0.01f64..50.0, nu in 0.05f64..6.0) {
            let th = MaternParams::new(s2, t2, phi, nu).unwrap();
            let back = th.reparameterize().unwrap().dereparameterize();
            prop_assert!((back.nugget_var - s2).abs() <= 1e-12 * s2.max(1.0));
            prop_assert!((back.partial_sill - t2).abs() <= 1e-12 * t2.max(1.0));
            let rp = th.reparameterize().unwrap();
            prop_assert!((0.0..=1.0).contains(&rp.spatial_frac));
        }

        #[test]
        fn correlation_decreasing(nu in 0.1f64..5.0, phi in 0.1f64..20.0, h in 0.01f64..10.0, dh in 0.01f64..2.0) {
            let a = matern_correlation(h, nu, phi).unwrap();
            let b = matern_correlation(h + dh, nu, phi).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
            if a > 1e-250 && a < 1.0 - 1e-12 { prop_assert!(b < a); }
        }

        #[test]
        fn logit_zeta_round_trip(frac in 0.001f64..0.999) {
            let p = ReparamMaternParams::new(1.0, frac, 1.0, 1.0).unwrap();
            let back = ReparamMaternParams::spatial_frac_from_logit(p.logit_zeta());
            prop_assert!((back - frac).abs() < 1e-12);
        }
    }
}
