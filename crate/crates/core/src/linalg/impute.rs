use rand::Rng;

use super::circulant::CirculantOperator;
use super::pcg::{pcg_solve, FnOperator, PcgConfig, PcgReport};
use crate::error::{PingError, Result};

/// Draw the unobserved entries of `Y ~ N(μ, Σ)` given the observed ones.
///
/// `observed[v]` marks observed lattice points; `values` is read only there.
/// Returns the missing values in increasing index order, realised as
/// `μ₂ + ε₂ + Σ₂₁ Σ₁₁⁻¹ (Y₁ - μ₁ - ε₁)` for an unconditional draw `ε`.
pub fn conditional_impute<R: Rng + ?Sized>(
    mean: &[f64],
    op: &CirculantOperator,
    observed: &[bool],
    values: &[f64],
    rng: &mut R,
    config: &PcgConfig,
) -> Result<(Vec<f64>, PcgReport)> {
    let n = op.grid().len();
    if mean.len() != n || observed.len() != n || values.len() != n {
        return Err(PingError::Dimension(format!(
            "grid {n}, mean {}, mask {}, values {}",
            mean.len(),
            observed.len(),
            values.len()
        )));
    }
    let obs: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
    let mis: Vec<usize> = (0..n).filter(|&i| !observed[i]).collect();
    let trivial = PcgReport {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
    };
    if mis.is_empty() {
        return Ok((Vec::new(), trivial));
    }
    let eps = op.draw(rng);
    if obs.is_empty() {
        return Ok((mis.iter().map(|&i| mean[i] + eps[i]).collect(), trivial));
    }

    let extend = |a: &[f64]| {
        let mut full = vec![0.0; n];
        for (&i, &v) in obs.iter().zip(a) {
            full[i] = v;
        }
        full
    };
    let sigma11 = FnOperator::new(obs.len(), |a: &[f64]| {
        let full = op.apply_unchecked(&extend(a));
        obs.iter().map(|&i| full[i]).collect()
    });
    let precond = FnOperator::new(obs.len(), |r: &[f64]| {
        let full = op.apply_full_inverse(&extend(r));
        obs.iter().map(|&i| full[i]).collect()
    });

    let rhs: Vec<f64> = obs.iter().map(|&i| values[i] - mean[i] - eps[i]).collect();
    let (a, report) = pcg_solve(&sigma11, &rhs, &precond, config)?;
    if !report.converged {
        return Err(PingError::Imputation { report });
    }
    let cross = op.apply_unchecked(&extend(&a));
    let draw = mis.iter().map(|&i| mean[i] + eps[i] + cross[i]).collect();
    Ok((draw, report))
}
