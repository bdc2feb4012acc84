use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::ReparamMaternParams;
use crate::dense::quantile_sorted;
use crate::error::{PingError, Result};
use crate::ping::PingField;

/// Proposed/accepted counts for one Metropolis block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockTally {
    pub proposed: u64,
    pub accepted: u64,
}

impl BlockTally {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// One adjustment of the Algorithm 1 step length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub iteration: usize,
    pub component: usize,
    pub rate: f64,
    pub c_before: f64,
    pub c_after: f64,
    /// `‖β_kᵘ − β_kᴺ‖₂` from the latest proposal.
    pub cap: f64,
}

/// Full sampler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub iteration: usize,
    pub alpha: Vec<f64>,
    /// One PING field per coefficient surface.
    pub betas: Vec<PingField>,
    pub theta_error: ReparamMaternParams,
    pub theta_intercept: ReparamMaternParams,
    /// `(τ₁², 1, φ₁, ν₁)` per coefficient surface.
    pub theta_ping: Vec<ReparamMaternParams>,
    /// Scalar-on-image noise variance.
    pub noise_var: f64,
    /// Random effects `γ_i`, one vector per image.
    pub gamma: Vec<Vec<f64>>,
    /// Row-major `Σ_γ`.
    pub sigma_gamma: Vec<f64>,
    /// Inverse-Wishart scale hyperparameter.
    pub re_scale: f64,
    /// Images with missing entries replaced by their latest imputation.
    pub completed: Vec<Vec<f64>>,
    /// Algorithm 1 step length per component of the first surface.
    pub c: Vec<f64>,
    /// Latest `‖β_kᵘ − β_kᴺ‖₂` per component.
    pub last_direction_norm: Vec<f64>,
    pub rw_scales: BTreeMap<String, f64>,
    pub tallies: BTreeMap<String, BlockTally>,
    /// Counts since the last adaptation window closed.
    pub windows: BTreeMap<String, BlockTally>,
}

impl ChainState {
    pub fn tally(&mut self, block: &str, accepted: bool) {
        self.tallies.entry(block.to_string()).or_default().record(accepted);
        self.windows.entry(block.to_string()).or_default().record(accepted);
    }

    pub fn rw_scale(&self, block: &str) -> f64 {
        self.rw_scales.get(block).copied().unwrap_or(0.1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.theta_error.total_var, self.theta_intercept.total_var, self.noise_var, self.re_scale]
            .into_iter()
            .chain(self.theta_ping.iter().map(|t| t.total_var))
            .all(|v| v.is_finite() && v > 0.0);
        if !positive {
            return Err(PingError::Numerical {
                iterations: self.iteration,
                message: "a variance parameter left (0, ∞)".into(),
            });
        }
        if self.c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(PingError::Numerical {
                iterations: self.iteration,
                message: "step length c must stay positive".into(),
            });
        }
        Ok(())
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| PingError::Checkpoint(format!("bad word position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Thinned post-burn-in draws of every coefficient surface.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawStore {
    /// `draws[surface][sample][voxel]`.
    pub draws: Vec<Vec<Vec<f64>>>,
}

impl DrawStore {
    pub fn new(surfaces: usize) -> Self {
        Self {
            draws: vec![Vec::new(); surfaces],
        }
    }

    pub fn push(&mut self, betas: &[PingField]) {
        for (store, b) in self.draws.iter_mut().zip(betas) {
            store.push(b.product().to_vec());
        }
    }

    pub fn len(&self) -> usize {
        self.draws.first().map_or(0, |d| d.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pointwise posterior mean and equal-tailed `level` interval.
    ///
    /// With no stored draws the summary collapses onto `fallback`.
    pub fn summarize(&self, level: f64, fallback: &[PingField]) -> Vec<SurfaceSummary> {
        let tail = (1.0 - level) / 2.0;
        self.draws
            .iter()
            .zip(fallback)
            .map(|(draws, init)| {
                if draws.is_empty() {
                    let v = init.product().to_vec();
                    return SurfaceSummary {
                        mean: v.clone(),
                        lower: v.clone(),
                        upper: v,
                    };
                }
                let n = init.len();
                let mut mean = vec![0.0; n];
                let mut lower = vec![0.0; n];
                let mut upper = vec![0.0; n];
                let mut column = Vec::with_capacity(draws.len());
                for v in 0..n {
                    column.clear();
                    column.extend(draws.iter().map(|d| d[v]));
                    mean[v] = column.iter().sum::<f64>() / column.len() as f64;
                    column.sort_by(|a, b| a.total_cmp(b));
                    lower[v] = quantile_sorted(&column, tail);
                    upper[v] = quantile_sorted(&column, 1.0 - tail);
                }
                SurfaceSummary { mean, lower, upper }
            })
            .collect()
    }
}

/// Pointwise posterior summary of one coefficient surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Everything a finished chain reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub summaries: Vec<SurfaceSummary>,
    pub acceptance: BTreeMap<String, f64>,
    pub adaptations: Vec<AdaptationRecord>,
    pub stored_draws: usize,
    pub final_state: ChainState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(3);
        let _: f64 = rng.random();
        let saved = RngState::capture(&rng);
        let a: Vec<u64> = (0..5).map(|_| rng.random()).collect();
        let mut back = saved.restore().unwrap();
        let b: Vec<u64> = (0..5).map(|_| back.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_of_constant_draws() {
        let f = PingField::new(1.0, vec![vec![1.0, -2.0]]).unwrap();
        let mut store = DrawStore::new(1);
        for _ in 0..10 {
            store.push(std::slice::from_ref(&f));
        }
        let s = store.summarize(0.95, std::slice::from_ref(&f));
        assert_eq!(s[0].mean, vec![1.0, -2.0]);
        assert_eq!(s[0].lower, vec![1.0, -2.0]);
        let empty = DrawStore::new(1).summarize(0.95, &[f]);
        assert_eq!(empty[0].upper, vec![1.0, -2.0]);
    }

    #[test]
    fn tally_rate() {
        let mut t = BlockTally::default();
        assert_eq!(t.rate(), 0.0);
        t.record(true);
        t.record(false);
        assert_eq!(t.rate(), 0.5);
    }
}
