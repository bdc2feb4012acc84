//! Image-on-scalar, image-on-image and scalar-on-image Gaussian likelihoods.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{matern_covariance, FrequencyTable, MaternParams};
use crate::dense::{cholesky, mvn_logpdf};
use crate::error::{PingError, Result};
use crate::grid::GridSpec;
use crate::linalg::CirculantOperator;
use crate::spectral::{spectral_gaussian_loglik, SpectralPlan};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// How a Gaussian error log-likelihood is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Independent real Fourier coefficients with variances `λ̃(ω|θ)`. Needs complete data.
    Spectral,
    /// Dense covariance of the wrap-around circulant induced by `λ̃(ω|θ)`.
    SpatialWrapped,
    /// Dense Bessel Matérn covariance between the observed locations.
    SpatialMatern,
}

/// Where the error field lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Lattice { grid: GridSpec, observed: Vec<bool> },
    Scattered { points: Vec<Vec<f64>> },
}

impl Support {
    pub fn complete(grid: &GridSpec) -> Self {
        Support::Lattice {
            grid: grid.clone(),
            observed: vec![true; grid.len()],
        }
    }

    /// Number of locations a field on this support carries.
    pub fn len(&self) -> usize {
        match self {
            Support::Lattice { grid, .. } => grid.len(),
            Support::Scattered { points } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices that enter the likelihood.
    pub fn observed_indices(&self) -> Vec<usize> {
        match self {
            Support::Lattice { observed, .. } => (0..observed.len()).filter(|&i| observed[i]).collect(),
            Support::Scattered { points } => (0..points.len()).collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        match self {
            Support::Lattice { observed, .. } => observed.iter().all(|&b| b),
            Support::Scattered { .. } => true,
        }
    }

    /// Coordinates of location `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        match self {
            Support::Lattice { grid, .. } => grid.point(i)[..grid.ndim()].to_vec(),
            Support::Scattered { points } => points[i].clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Support::Lattice { grid, observed } if observed.len() != grid.len() => Err(PingError::Dimension(
                format!("mask of {} for a grid of {}", observed.len(), grid.len()),
            )),
            Support::Scattered { points } => {
                let d = points.first().map_or(0, |p| p.len());
                if points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
                    return Err(PingError::Dimension("scattered points differ in dimension".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `Y_i(v) = α(v) + t_i β(v) + E_i(v)` on a lattice, with a shared missing mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOnScalarData {
    pub grid: GridSpec,
    pub images: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub observed: Vec<bool>,
}

impl ImageOnScalarData {
    pub fn new(grid: GridSpec, images: Vec<Vec<f64>>, times: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        let data = Self {
            grid,
            images,
            times,
            observed,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.images.len() != self.times.len() {
            return Err(PingError::Dimension(format!(
                "{} images but {} times",
                self.images.len(),
                self.times.len()
            )));
        }
        if self.observed.len() != n || self.images.iter().any(|y| y.len() != n) {
            return Err(PingError::Dimension(format!("images and mask must have {n} points")));
        }
        let bad = self
            .images
            .iter()
            .any(|y| y.iter().zip(&self.observed).any(|(v, &o)| o && !v.is_finite()));
        if bad || self.times.iter().any(|t| !t.is_finite()) {
            return Err(PingError::Parameter("non-finite observed value".into()));
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&b| b)
    }

    pub fn support(&self) -> Support {
        Support::Lattice {
            grid: self.grid.clone(),
            observed: self.observed.clone(),
        }
    }
}

/// Centre and scale times so that `Σ t_i = 0` and `Σ t_i² = n`.
pub fn standardize_times(raw: &[f64]) -> Result<Vec<f64>> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let ss = raw.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
    if raw.len() < 2 || ss <= 0.0 {
        return Err(PingError::Degenerate("times must not all be equal".into()));
    }
    let s = (ss / n).sqrt();
    Ok(raw.iter().map(|t| (t - mean) / s).collect())
}

/// `Y_i(v) = α(v) + Σ_j X_ij(v) β_j(v) + E_i(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOnImageData {
    pub support: Support,
    pub images: Vec<Vec<f64>>,
    /// `predictors[i][j]` is predictor image `j` of subject `i`.
    pub predictors: Vec<Vec<Vec<f64>>>,
}

impl ImageOnImageData {
    pub fn new(support: Support, images: Vec<Vec<f64>>, predictors: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let data = Self {
            support,
            images,
            predictors,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        self.support.validate()?;
        let n = self.support.len();
        if self.images.len() != self.predictors.len() {
            return Err(PingError::Dimension("images and predictor sets differ in count".into()));
        }
        let p = self.n_predictors();
        for (y, xs) in self.images.iter().zip(&self.predictors) {
            if y.len() != n || xs.len() != p || xs.iter().any(|x| x.len() != n) {
                return Err(PingError::Dimension(format!(
                    "every image and predictor needs {n} locations and {p} predictors"
                )));
            }
            if xs.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PingError::Parameter("non-finite predictor value".into()));
            }
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.first().map_or(0, |x| x.len())
    }
}

/// `Y_i ~ N(Σ_v X_i(v) β(v), σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarOnImageData {
    pub grid: GridSpec,
    pub responses: Vec<f64>,
    pub images: Vec<Vec<f64>>,
}

impl ScalarOnImageData {
    pub fn new(grid: GridSpec, responses: Vec<f64>, images: Vec<Vec<f64>>) -> Result<Self> {
        let data = Self {
            grid,
            responses,
            images,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.responses.len() != self.images.len() {
            return Err(PingError::Dimension("responses and images differ in count".into()));
        }
        let n = self.grid.len();
        if self.images.iter().any(|x| x.len() != n) {
            return Err(PingError::Dimension(format!("images must have {n} pixels")));
        }
        if self.responses.iter().chain(self.images.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(PingError::Parameter("non-finite entry".into()));
        }
        Ok(())
    }

    /// Design matrix with one row per observation.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.images.len(), self.grid.len(), |i, v| self.images[i][v])
    }
}

/// `Y_i - α - t_i β`.
pub fn ios_residuals(data: &ImageOnScalarData, alpha: &[f64], beta: &[f64]) -> Vec<Vec<f64>> {
    data.images
        .iter()
        .zip(&data.times)
        .map(|(y, &t)| {
            y.iter()
                .zip(alpha)
                .zip(beta)
                .map(|((y, a), b)| y - a - t * b)
                .collect()
        })
        .collect()
}

/// `Y_i - α - Σ_j X_ij β_j`.
pub fn ioi_residuals(data: &ImageOnImageData, alpha: &[f64], betas: &[&[f64]]) -> Vec<Vec<f64>> {
    data.images
        .iter()
        .zip(&data.predictors)
        .map(|(y, xs)| {
            (0..y.len())
                .map(|v| {
                    let fit: f64 = xs.iter().zip(betas).map(|(x, b)| x[v] * b[v]).sum();
                    y[v] - alpha[v] - fit
                })
                .collect()
        })
        .collect()
}

/// Dense covariance of the error at the observed locations of `support`.
pub fn dense_error_covariance(support: &Support, error: &MaternParams, domain: Domain) -> Result<DMatrix<f64>> {
    let idx = support.observed_indices();
    match (domain, support) {
        (Domain::SpatialWrapped, Support::Lattice { grid, .. }) => {
            let lam = FrequencyTable::new(grid).adjusted_variances(error);
            let op = CirculantOperator::from_spectrum(grid, lam)?;
            Ok(DMatrix::from_fn(idx.len(), idx.len(), |a, b| op.covariance(idx[a], idx[b])))
        }
        (Domain::SpatialMatern, _) => {
            let pts: Vec<Vec<f64>> = idx.iter().map(|&i| support.point(i)).collect();
            let mut m = DMatrix::zeros(idx.len(), idx.len());
            for a in 0..idx.len() {
                for b in 0..=a {
                    let c = matern_covariance(&pts[a], &pts[b], error)?;
                    m[(a, b)] = c;
                    m[(b, a)] = c;
                }
            }
            Ok(m)
        }
        _ => Err(PingError::Precondition(format!(
            "{domain:?} has no dense covariance on this support"
        ))),
    }
}

/// Gaussian log-likelihood of iid error fields `residuals` under `error`.
pub fn field_loglik(residuals: &[Vec<f64>], support: &Support, error: &MaternParams, domain: Domain) -> Result<f64> {
    error.validate()?;
    support.validate()?;
    if residuals.iter().any(|r| r.len() != support.len()) {
        return Err(PingError::Dimension("residual length differs from support".into()));
    }
    match domain {
        Domain::Spectral => {
            let grid = match support {
                Support::Lattice { grid, .. } if support.is_complete() => grid,
                Support::Lattice { .. } => {
                    return Err(PingError::Precondition(
                        "spectral likelihood needs complete (imputed) data".into(),
                    ))
                }
                Support::Scattered { .. } => {
                    return Err(PingError::Precondition("spectral likelihood needs a lattice".into()))
                }
            };
            let lam = FrequencyTable::new(grid).adjusted_variances(error);
            let plan = SpectralPlan::new(grid);
            let mut total = 0.0;
            for r in residuals {
                total += spectral_gaussian_loglik(&plan.forward(r)?.coefficients, &lam);
            }
            Ok(total)
        }
        _ => {
            let idx = support.observed_indices();
            let cov = dense_error_covariance(support, error, domain)?;
            if cov.iter().all(|&c| c == 0.0) {
                return Err(PingError::Degenerate("zero error covariance".into()));
            }
            let chol = cholesky(&cov)?;
            let xs: Vec<DVector<f64>> = residuals
                .iter()
                .map(|r| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i])))
                .collect();
            Ok(mvn_logpdf(&xs, &chol))
        }
    }
}

pub fn ios_loglik(
    data: &ImageOnScalarData,
    alpha: &[f64],
    beta: &[f64],
    error: &MaternParams,
    domain: Domain,
) -> Result<f64> {
    data.validate()?;
    let n = data.grid.len();
    if alpha.len() != n || beta.len() != n {
        return Err(PingError::Dimension(format!("α and β must have {n} points")));
    }
    field_loglik(&ios_residuals(data, alpha, beta), &data.support(), error, domain)
}

pub fn ioi_loglik(
    data: &ImageOnImageData,
    alpha: &[f64],
    betas: &[&[f64]],
    error: &MaternParams,
    domain: Domain,
) -> Result<f64> {
    data.validate()?;
    let n = data.support.len();
    if betas.len() != data.n_predictors() {
        return Err(PingError::Dimension(format!(
            "{} coefficient surfaces for {} predictors",
            betas.len(),
            data.n_predictors()
        )));
    }
    if alpha.len() != n || betas.iter().any(|b| b.len() != n) {
        return Err(PingError::Dimension(format!("α and β_j must have {n} points")));
    }
    field_loglik(&ioi_residuals(data, alpha, betas), &data.support, error, domain)
}

/// `Σ_i log N(Y_i | ⟨X_i, β⟩, σ²)`.
pub fn soi_loglik(data: &ScalarOnImageData, beta: &[f64], noise_var: f64) -> Result<f64> {
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(PingError::Parameter(format!("σ² must be > 0, got {noise_var}")));
    }
    if beta.len() != data.grid.len() {
        return Err(PingError::Dimension("β does not match the image grid".into()));
    }
    Ok(data
        .responses
        .iter()
        .zip(&data.images)
        .map(|(y, x)| {
            let fit: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            -HALF_LN_2PI - 0.5 * noise_var.ln() - (y - fit).powi(2) / (2.0 * noise_var)
        })
        .sum())
}
