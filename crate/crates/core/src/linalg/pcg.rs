use serde::{Deserialize, Serialize};

use crate::error::{PingError, Result};

/// A symmetric linear map `x -> A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgConfig {
    pub tol: f64,
    /// Defaults to `ceil(10 √n)` when unset.
    pub max_iter: Option<usize>,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradient for `A a = b`.
pub fn pcg_solve(
    op: &dyn LinearOperator,
    b: &[f64],
    preconditioner: &dyn LinearOperator,
    config: &PcgConfig,
) -> Result<(Vec<f64>, PcgReport)> {
    let n = op.dim();
    if b.len() != n || preconditioner.dim() != n {
        return Err(PingError::Dimension(format!(
            "operator {n}, rhs {}, preconditioner {}",
            b.len(),
            preconditioner.dim()
        )));
    }
    let max_iter = config
        .max_iter
        .unwrap_or_else(|| ((10.0 * (n as f64).sqrt()).ceil() as usize).max(1));
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            PcgReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = preconditioner.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for k in 1..=max_iter {
        let ap = op.apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(PingError::Numerical {
                iterations: k,
                message: format!("conjugate gradient breakdown (pᵀAp = {curvature:e})"),
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= config.tol {
            return Ok((
                x,
                PcgReport {
                    iterations: k,
                    relative_residual: residual,
                    converged: true,
                },
            ));
        }
        z = preconditioner.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((
        x,
        PcgReport {
            iterations: max_iter,
            relative_residual: residual,
            converged: false,
        },
    ))
}
