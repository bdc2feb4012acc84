//! Covariance functions: spatial Matérn, lattice quasi-Matérn spectrum, B-spline random effects.

mod bessel;
mod bspline;
mod matern;

pub use bessel::bessel_k;
pub use bspline::{nonstationary_covariance, BSplineBasis};
pub use matern::{
    adjusted_spectral_variance, matern_correlation, matern_covariance, powered_exponential,
    quasi_matern_density, spectral_variances, FrequencyTable, MaternParams, ReparamMaternParams,
};
