use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::covariance::MaternParams;
use crate::error::{PingError, Result};
use crate::grid::GridSpec;
use crate::spectral::SpectralPlan;

const CLIP_TOL: f64 = 1e-10;
const HARD_TOL: f64 = 1e-6;

/// How the lattice covariance is extended to a circulant one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedding {
    /// Every axis multiplied by the factor (2 is the minimal even embedding).
    Padded(usize),
    /// The covariance is already periodic on the original grid.
    WrapAround,
}

impl Embedding {
    pub const DOUBLED: Embedding = Embedding::Padded(2);
}

/// Stationary lattice covariance embedded in a (nested block) circulant matrix.
#[derive(Debug, Clone)]
pub struct CirculantOperator {
    grid: GridSpec,
    embed: GridSpec,
    plan: SpectralPlan,
    eigenvalues: Vec<f64>,
    sqrt_eigenvalues: Vec<f64>,
    base: Vec<f64>,
    to_embed: Vec<usize>,
}

impl CirculantOperator {
    /// Build from a covariance function of the (per-axis, non-negative) lag.
    pub fn from_lag_covariance<F>(grid: &GridSpec, embedding: Embedding, cov: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64>,
    {
        let embed = match embedding {
            Embedding::Padded(f) if f >= 2 => grid.scaled(f),
            Embedding::Padded(f) => {
                return Err(PingError::Parameter(format!("embedding factor {f} < 2")))
            }
            Embedding::WrapAround => grid.clone(),
        };
        let d = grid.ndim();
        let mut base = Vec::with_capacity(embed.len());
        let mut lag = vec![0.0; d];
        for idx in 0..embed.len() {
            let c = embed.coords(idx);
            for a in 0..d {
                let m = embed.dims()[a];
                lag[a] = c[a].min(m - c[a]) as f64;
            }
            base.push(cov(&lag)?);
        }
        let plan = SpectralPlan::new(&embed);
        let mut spec: Vec<Complex64> = base.iter().map(|&b| Complex64::new(b, 0.0)).collect();
        plan.complex_forward(&mut spec);
        let root_m = (embed.len() as f64).sqrt();
        let eigenvalues: Vec<f64> = spec.iter().map(|z| z.re * root_m).collect();
        Self::assemble(grid, embed, plan, eigenvalues, base)
    }

    /// Matérn covariance of `θ` (spatial form with the Bessel kernel).
    pub fn from_matern(grid: &GridSpec, theta: &MaternParams, embedding: Embedding) -> Result<Self> {
        theta.validate()?;
        Self::from_lag_covariance(grid, embedding, |lag| {
            let h = lag.iter().map(|x| x * x).sum::<f64>().sqrt();
            theta.covariance_at(h)
        })
    }

    /// Smallest padding factor (starting at 2) whose embedding is nonnegative definite.
    pub fn from_matern_auto(grid: &GridSpec, theta: &MaternParams, max_factor: usize) -> Result<Self> {
        let mut last = None;
        for f in 2..=max_factor.max(2) {
            match Self::from_matern(grid, theta, Embedding::Padded(f)) {
                Ok(op) => return Ok(op),
                Err(e @ PingError::Covariance { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one factor tried"))
    }

    /// Wrap-around operator whose eigenvalues are given directly (one per frequency slot).
    pub fn from_spectrum(grid: &GridSpec, eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != grid.len() {
            return Err(PingError::Dimension(format!(
                "{} eigenvalues for a grid of {} points",
                eigenvalues.len(),
                grid.len()
            )));
        }
        let plan = SpectralPlan::new(grid);
        let mut spec: Vec<Complex64> = eigenvalues.iter().map(|&l| Complex64::new(l, 0.0)).collect();
        plan.complex_inverse(&mut spec);
        let root_m = (grid.len() as f64).sqrt();
        let base = spec.iter().map(|z| z.re / root_m).collect();
        Self::assemble(grid, grid.clone(), plan, eigenvalues, base)
    }

    fn assemble(
        grid: &GridSpec,
        embed: GridSpec,
        plan: SpectralPlan,
        eigenvalues: Vec<f64>,
        base: Vec<f64>,
    ) -> Result<Self> {
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(PingError::Numerical {
                iterations: 0,
                message: "non-finite circulant eigenvalue".into(),
            });
        }
        let max = eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let scale = max.abs().max(f64::MIN_POSITIVE);
        if min < -HARD_TOL * scale {
            return Err(PingError::Covariance {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        if min < -CLIP_TOL * scale {
            log::warn!("clipping negative circulant eigenvalues (min {min:e}, max {max:e})");
        }
        let sqrt_eigenvalues = eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let to_embed = (0..grid.len())
            .map(|i| {
                let c = grid.coords(i);
                embed.index(&c[..grid.ndim()])
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            embed,
            plan,
            eigenvalues,
            sqrt_eigenvalues,
            base,
            to_embed,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn embedding_grid(&self) -> &GridSpec {
        &self.embed
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Covariance between two original-grid points.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let ca = self.grid.coords(a);
        let cb = self.grid.coords(b);
        let mut idx = 0;
        for k in 0..self.grid.ndim() {
            let m = self.embed.dims()[k];
            let diff = (ca[k] as isize - cb[k] as isize).rem_euclid(m as isize) as usize;
            idx = idx * m + diff;
        }
        self.base[idx]
    }

    fn embed_field(&self, x: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.embed.len()];
        for (&e, &v) in self.to_embed.iter().zip(x) {
            out[e] = Complex64::new(v, 0.0);
        }
        out
    }

    fn extract(&self, data: &[Complex64]) -> Vec<f64> {
        self.to_embed.iter().map(|&e| data[e].re).collect()
    }

    fn apply_diagonal(&self, x: &[f64], diag: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut data = self.embed_field(x);
        self.plan.complex_forward(&mut data);
        for (i, z) in data.iter_mut().enumerate() {
            *z *= diag(i);
        }
        self.plan.complex_inverse(&mut data);
        self.extract(&data)
    }

    /// `Σ x` without input validation.
    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.apply_diagonal(x, |i| self.eigenvalues[i])
    }

    /// `Σ x` on the original grid.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.grid.len() {
            return Err(PingError::Dimension(format!(
                "vector of length {} for a grid of {}",
                x.len(),
                self.grid.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PingError::Precondition("non-finite input to matvec".into()));
        }
        Ok(self.apply_diagonal(x, |i| self.eigenvalues[i]))
    }

    /// Inverse of the full embedded circulant, restricted to the original grid.
    /// Exact inverse of `Σ` for wrap-around operators.
    pub fn apply_full_inverse(&self, x: &[f64]) -> Vec<f64> {
        let max = self.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let floor = CLIP_TOL * max;
        self.apply_diagonal(x, |i| 1.0 / self.eigenvalues[i].max(floor))
    }

    /// Exact draw from `N(0, Σ)` on the original grid.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut data: Vec<Complex64> = (0..self.embed.len())
            .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
            .collect();
        self.plan.complex_forward(&mut data);
        for (z, &s) in data.iter_mut().zip(&self.sqrt_eigenvalues) {
            *z *= s;
        }
        self.plan.complex_inverse(&mut data);
        self.extract(&data)
    }

    /// Dense covariance matrix on the original grid (small grids only).
    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.grid.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.covariance(i, j))
    }
}

/// `Σ x` through the circulant embedding.
pub fn circulant_matvec(op: &CirculantOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.matvec(x)
}

/// Exact unconditional draw from `N(0, Σ)`.
pub fn unconditional_draw<R: Rng + ?Sized>(op: &CirculantOperator, rng: &mut R) -> Vec<f64> {
    op.draw(rng)
}
