use nalgebra::DMatrix;

use crate::covariance::{matern_correlation, MaternParams};
use crate::error::{PingError, Result};

/// Relative diagonal jitter added to every dense prior covariance.
pub const PRIOR_JITTER: f64 = 1e-6;

/// Pairwise-distance table of a point set with Matérn Gram matrices built from unique distances.
#[derive(Debug, Clone)]
pub struct MaternGram {
    n: usize,
    unique: Vec<f64>,
    // row-major index into `unique`
    lookup: Vec<u32>,
}

impl MaternGram {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if points.iter().any(|p| p.len() != points.first().map_or(0, |q| q.len())) {
            return Err(PingError::Dimension("points of mixed dimension".into()));
        }
        let dist = |i: usize, j: usize| -> f64 {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut all: Vec<f64> = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                all.push(dist(i, j));
            }
        }
        all.sort_by(|a, b| a.total_cmp(b));
        all.dedup();
        let mut lookup = vec![0u32; n * n];
        for i in 0..n {
            for j in i..n {
                let d = dist(i, j);
                let k = all.partition_point(|&u| u < d) as u32;
                lookup[i * n + j] = k;
                lookup[j * n + i] = k;
            }
        }
        Ok(Self { n, unique: all, lookup })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn unique_distances(&self) -> usize {
        self.unique.len()
    }

    /// `σ² I + τ² M_ν(‖v - v'‖/φ) + jitter · τ² I`.
    pub fn covariance(&self, theta: &MaternParams, jitter: f64) -> Result<DMatrix<f64>> {
        theta.validate()?;
        let corr: Vec<f64> = self
            .unique
            .iter()
            .map(|&h| matern_correlation(h, theta.smoothness, theta.range))
            .collect::<Result<_>>()?;
        let n = self.n;
        let mut m = DMatrix::from_fn(n, n, |i, j| theta.partial_sill * corr[self.lookup[i * n + j] as usize]);
        let diag = theta.nugget_var + jitter * theta.partial_sill;
        for i in 0..n {
            m[(i, i)] += diag;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::matern_covariance;

    #[test]
    fn matches_direct_evaluation() {
        let pts: Vec<Vec<f64>> = (0..5).flat_map(|i| (0..4).map(move |j| vec![i as f64, j as f64])).collect();
        let g = MaternGram::new(&pts).unwrap();
        assert!(g.unique_distances() < pts.len() * pts.len());
        let th = MaternParams::new(0.2, 1.3, 2.0, 0.7).unwrap();
        let m = g.covariance(&th, 0.0).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let direct = matern_covariance(&pts[i], &pts[j], &th).unwrap();
                assert!((m[(i, j)] - direct).abs() < 1e-14);
            }
        }
    }
}
