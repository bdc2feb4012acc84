//! Real-coefficient orthonormal discrete Fourier transform on lattices.
//!
//! Convention: each conjugate frequency pair `(k, -k)` with `k ≠ -k` owns two
//! slots. The slot with the smaller linear index holds `√2 Re X(k)` and the
//! partner slot holds `√2 Im X(k)`, where `X` is the complex DFT scaled by
//! `1/√n`. Self-conjugate frequencies hold `X(k)`, which is real. The map is
//! orthonormal, so a stationary field whose wrap-around covariance has
//! eigenvalues `Λ(k)` yields independent coefficients with variance `Λ(k)`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PingError, Result};
use crate::grid::GridSpec;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Cached FFT plans for one lattice. Immutable, safe to share across threads.
#[derive(Clone)]
pub struct SpectralPlan {
    grid: GridSpec,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    conjugate: Vec<usize>,
    scale: f64,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("grid", &self.grid).finish()
    }
}

/// Lattice field in the real orthonormal Fourier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub coefficients: Vec<f64>,
}

impl SpectralField {
    /// Angular frequency of slot `idx`.
    pub fn frequency(&self, idx: usize) -> [f64; 3] {
        self.grid.frequency(idx)
    }
}

impl SpectralPlan {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.dims().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.dims().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let conjugate = (0..grid.len()).map(|i| grid.conjugate_index(i)).collect();
        Self {
            grid: grid.clone(),
            forward,
            inverse,
            conjugate,
            scale: 1.0 / (grid.len() as f64).sqrt(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn transform_axes(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let dims = self.grid.dims();
        let total = data.len();
        let mut stride = total;
        let mut lines = vec![Complex64::default(); total];
        for (axis, plan) in plans.iter().enumerate() {
            let n = dims[axis];
            stride /= n;
            if n == 1 {
                continue;
            }
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // gather every line along this axis into contiguous storage, transform in one batch
            let block = n * stride;
            let mut pos = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..n {
                        lines[pos + k] = data[base + k * stride];
                    }
                    pos += n;
                }
            }
            plan.process_with_scratch(&mut lines, &mut scratch);
            pos = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for k in 0..n {
                        data[base + k * stride] = lines[pos + k];
                    }
                    pos += n;
                }
            }
        }
        for v in data.iter_mut() {
            *v *= self.scale;
        }
    }

    /// Orthonormal complex DFT, in place.
    pub fn complex_forward(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.forward);
    }

    /// Inverse of [`Self::complex_forward`], in place.
    pub fn complex_inverse(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.inverse);
    }

    /// Real coefficients from a complex spectrum of a real field.
    pub fn pack(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; spectrum.len()];
        for (idx, &conj) in self.conjugate.iter().enumerate() {
            if conj == idx {
                out[idx] = spectrum[idx].re;
            } else if idx < conj {
                out[idx] = SQRT2 * spectrum[idx].re;
                out[conj] = SQRT2 * spectrum[idx].im;
            }
        }
        out
    }

    /// Complex (Hermitian) spectrum from real coefficients.
    pub fn unpack(&self, coefficients: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); coefficients.len()];
        for (idx, &conj) in self.conjugate.iter().enumerate() {
            if conj == idx {
                out[idx] = Complex64::new(coefficients[idx], 0.0);
            } else if idx < conj {
                let z = Complex64::new(coefficients[idx], coefficients[conj]) / SQRT2;
                out[idx] = z;
                out[conj] = z.conj();
            }
        }
        out
    }

    /// Real coefficients of `field` without validation.
    pub fn forward_raw(&self, field: &[f64]) -> Vec<f64> {
        let mut data: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.complex_forward(&mut data);
        self.pack(&data)
    }

    pub fn forward(&self, field: &[f64]) -> Result<SpectralField> {
        if field.len() != self.grid.len() {
            return Err(PingError::Dimension(format!(
                "field has {} values, grid has {}",
                field.len(),
                self.grid.len()
            )));
        }
        if field.iter().any(|x| !x.is_finite()) {
            return Err(PingError::Precondition("field contains non-finite values".into()));
        }
        Ok(SpectralField {
            grid: self.grid.clone(),
            coefficients: self.forward_raw(field),
        })
    }

    /// Lattice field from real coefficients.
    pub fn inverse(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut data = self.unpack(coefficients);
        self.complex_inverse(&mut data);
        data.into_iter().map(|z| z.re).collect()
    }
}

pub fn forward_transform(field: &[f64], grid: &GridSpec) -> Result<SpectralField> {
    SpectralPlan::new(grid).forward(field)
}

pub fn inverse_transform(sf: &SpectralField) -> Vec<f64> {
    SpectralPlan::new(&sf.grid).inverse(&sf.coefficients)
}

/// Coefficients of the pointwise product `a ⊙ b`, the convolution of their spectra.
pub fn spectral_product_transform(
    plan: &SpectralPlan,
    a: &[f64],
    b: &[f64],
) -> Result<SpectralField> {
    if a.len() != b.len() {
        return Err(PingError::Dimension(format!(
            "fields of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    plan.forward(&prod)
}

/// `Σ_ω [-½ log 2π - ½ log λ̃(ω) - c(ω)² / (2 λ̃(ω))]`.
pub fn spectral_gaussian_loglik(coefficients: &[f64], variances: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    coefficients
        .iter()
        .zip(variances)
        .map(|(c, v)| -HALF_LN_2PI - 0.5 * v.ln() - c * c / (2.0 * v))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn constant_field_is_dc_only() {
        let g = GridSpec::new(&[3, 4, 5]).unwrap();
        let plan = SpectralPlan::new(&g);
        let c = 1.7;
        let sf = plan.forward(&vec![c; g.len()]).unwrap();
        assert!((sf.coefficients[0] - c * (g.len() as f64).sqrt()).abs() < 1e-12);
        assert!(sf.coefficients[1..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_finite() {
        let g = GridSpec::new(&[4]).unwrap();
        assert!(forward_transform(&[1.0, f64::NAN, 0.0, 0.0], &g).is_err());
    }

    /// Brute-force complex DFT with orthonormal scaling.
    fn direct_dft(grid: &GridSpec, x: &[f64]) -> Vec<Complex64> {
        let n = grid.len();
        (0..n)
            .map(|k| {
                let w = grid.frequency(k);
                let mut acc = Complex64::default();
                for (v, &xv) in x.iter().enumerate() {
                    let c = grid.coords(v);
                    let phase: f64 = (0..grid.ndim()).map(|a| w[a] * c[a] as f64).sum();
                    acc += Complex64::from_polar(xv, -phase);
                }
                acc / (n as f64).sqrt()
            })
            .collect()
    }

    /// Map a Hermitian spectrum to the real convention, independently of `pack`.
    fn to_real(grid: &GridSpec, spec: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; spec.len()];
        for k in 0..spec.len() {
            let kc = grid.conjugate_index(k);
            if kc == k {
                out[k] = spec[k].re;
            } else if k < kc {
                out[k] = 2f64.sqrt() * spec[k].re;
            } else {
                out[k] = 2f64.sqrt() * spec[kc].im;
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft() {
        for dims in [vec![5], vec![4, 6], vec![3, 4, 5]] {
            let g = GridSpec::new(&dims).unwrap();
            let x = random_field(g.len(), 11);
            let plan = SpectralPlan::new(&g);
            let got = plan.forward(&x).unwrap().coefficients;
            let expected = to_real(&g, &direct_dft(&g, &x));
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_is_circular_convolution() {
        // 4³ fields; brute-force O(n²) convolution of direct DFT coefficients.
        let g = GridSpec::cube(4, 3).unwrap();
        let n = g.len();
        let a = random_field(n, 1);
        let b = random_field(n, 2);
        let fa = direct_dft(&g, &a);
        let fb = direct_dft(&g, &b);
        let mut conv = vec![Complex64::default(); n];
        for k in 0..n {
            let ck = g.coords(k);
            for j in 0..n {
                let cj = g.coords(j);
                let diff: Vec<usize> = (0..3).map(|ax| (ck[ax] + 4 - cj[ax]) % 4).collect();
                conv[k] += fa[j] * fb[g.index(&diff)];
            }
            conv[k] /= (n as f64).sqrt();
        }
        let expected = to_real(&g, &conv);
        let plan = SpectralPlan::new(&g);
        let got = spectral_product_transform(&plan, &a, &b).unwrap().coefficients;
        for (x, y) in got.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        let ones = vec![1.0; n];
        assert_eq!(
            spectral_product_transform(&plan, &a, &ones).unwrap().coefficients,
            plan.forward(&a).unwrap().coefficients
        );
        let zeros = vec![0.0; n];
        assert!(spectral_product_transform(&plan, &zeros, &b)
            .unwrap()
            .coefficients
            .iter()
            .all(|&c| c == 0.0));
        assert!(spectral_product_transform(&plan, &a, &b[..10]).is_err());
    }

    #[test]
    fn single_mode_is_cosine() {
        let g = GridSpec::new(&[8]).unwrap();
        let plan = SpectralPlan::new(&g);
        let mut coef = vec![0.0; 8];
        coef[1] = 1.0;
        let x = plan.inverse(&coef);
        for (v, &xv) in x.iter().enumerate() {
            let expected = (2.0 / 8.0f64).sqrt() * (2.0 * PI * v as f64 / 8.0).cos();
            assert!((xv - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn concurrent_calls_agree() {
        let g = GridSpec::cube(6, 3).unwrap();
        let plan = SpectralPlan::new(&g);
        let x = random_field(g.len(), 5);
        let reference = plan.forward_raw(&x);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(|| plan.forward_raw(&x))).collect();
            for h in handles {
                assert_eq!(h.join().unwrap(), reference);
            }
        });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_parseval_linearity(n0 in 1usize..7, n1 in 1usize..7, n2 in 1usize..6, seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let g = GridSpec::new(&[n0, n1, n2]).unwrap();
            let plan = SpectralPlan::new(&g);
            let x = random_field(g.len(), seed);
            let y = random_field(g.len(), seed + 1);
            let cx = plan.forward_raw(&x);
            let back = plan.inverse(&cx);
            let norm: f64 = x.iter().map(|v| v * v).sum();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-10 * norm.sqrt().max(1.0));
            }
            let energy: f64 = cx.iter().map(|v| v * v).sum();
            prop_assert!((energy - norm).abs() <= 1e-10 * norm.max(1.0));
            let cy = plan.forward_raw(&y);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + b).collect();
            let cc = plan.forward_raw(&combo);
            for i in 0..cc.len() {
                prop_assert!((cc[i] - (alpha * cx[i] + cy[i])).abs() < 1e-10);
            }
        }
    }
}
