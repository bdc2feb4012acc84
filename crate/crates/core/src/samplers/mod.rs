//! MCMC for the three regression models with PING priors.
//!
//! Image-on-scalar chains run in the spectral domain. PING components are
//! drawn from their full conditionals with conjugate gradients
//! ([`conditional_component_draw`]) or moved by the Gibbs-guided Metropolis
//! step ([`algorithm1_log_ratio`]).
//! Image-on-image and scalar-on-image chains are small and use exact dense
//! Gibbs updates for every component.

mod checkpoint;
mod dense_chains;
mod gram;
mod ios;
pub mod kernels;
mod state;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PingError, Result};
use crate::linalg::PcgConfig;
use crate::models::{ImageOnImageData, ImageOnScalarData, ScalarOnImageData};

pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gram::MaternGram;
pub use ios::{algorithm1_log_ratio, conditional_component_draw, ComponentTerms, IosChain};
pub use kernels::{adapt_c, gibbs_ping_component, gibbs_random_effects, gibbs_total_variance, metropolis_matern};
pub use state::{AdaptationRecord, BlockTally, ChainOutput, ChainState, DrawStore, RngState, SurfaceSummary};

/// How Algorithm 1 turns the reduced-model quantities into a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    /// `V = (Σtᵢ²)⁻¹ (1/λ̃₁ + 1/λ̃)⁻¹`, `M = Q̃/V` with `Q̃` the `t`-weighted average of `Q_i`.
    Printed,
    /// Exact conditional of the reduced model: precision `Σtᵢ²/λ̃ + 1/λ̃₁`.
    #[default]
    Weighted,
}

/// How image-on-scalar PING components are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentUpdate {
    /// Gibbs-guided Metropolis move along the line to a reduced-model draw.
    Guided,
    /// Full-conditional draw by perturbation and preconditioned conjugate gradients.
    #[default]
    Exact,
}

/// Run-length, tuning and output options for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Post-burn-in iterations.
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Number of PING components per coefficient surface.
    pub q: usize,
    /// Missing values are re-imputed every this many iterations.
    pub impute_every: usize,
    pub proposal: ProposalKind,
    pub update: ComponentUpdate,
    /// Include the proposal-density ratio in the Algorithm 1 acceptance.
    pub hastings: bool,
    /// With `q = 1`, draw the slope from its exact spectral conditional.
    pub exact_gp: bool,
    pub adapt_window: usize,
    /// B-spline basis functions per axis for image-level random effects.
    pub random_effects: Option<usize>,
    pub pcg: PcgConfig,
    /// Largest support handled by dense conditionals.
    pub dense_ceiling: usize,
    pub credible_level: f64,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burnin: 2000,
            thin: 1,
            seed: 0,
            q: 3,
            impute_every: 30,
            proposal: ProposalKind::default(),
            update: ComponentUpdate::default(),
            hastings: false,
            exact_gp: true,
            adapt_window: kernels::ADAPT_WINDOW,
            random_effects: None,
            pcg: PcgConfig::default(),
            dense_ceiling: 4096,
            credible_level: 0.95,
            checkpoint_dir: None,
            checkpoint_every: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PingError::Config(m.to_string()));
        if self.q == 0 {
            return bad("q must be at least 1");
        }
        if self.thin == 0 || self.impute_every == 0 || self.adapt_window == 0 {
            return bad("thin, impute_every and adapt_window must be positive");
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return bad("credible_level must lie in (0, 1)");
        }
        if self.random_effects == Some(0) || self.random_effects.is_some_and(|j| j < 4) {
            return bad("random effects need at least 4 basis functions per axis");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.burnin + self.iterations
    }
}

/// Data for one chain.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Ios(&'a ImageOnScalarData),
    Ioi(&'a ImageOnImageData),
    Soi(&'a ScalarOnImageData),
}

/// One model's sampler: initialization and a full sweep of the update schedule.
pub(crate) trait Sweep {
    fn surfaces(&self) -> usize;
    fn init(&self, rng: &mut ChaCha8Rng) -> Result<ChainState>;
    fn step(&self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()>;
}

/// Run a chain from its initial state.
pub fn run_chain(problem: Problem<'_>, config: &ChainConfig) -> Result<ChainOutput> {
    config.validate()?;
    with_sweep(problem, config, |sweep| drive(sweep, config, None))
}

/// Continue a chain from a checkpoint written with the same configuration.
pub fn resume_chain(problem: Problem<'_>, config: &ChainConfig, path: &Path) -> Result<ChainOutput> {
    config.validate()?;
    let ck = load_checkpoint(path, &config_hash(config)?)?;
    with_sweep(problem, config, |sweep| drive(sweep, config, Some(ck)))
}

fn with_sweep<T>(problem: Problem<'_>, config: &ChainConfig, f: impl FnOnce(&dyn Sweep) -> Result<T>) -> Result<T> {
    match problem {
        Problem::Ios(d) => f(&IosChain::new(d, config)?),
        Problem::Ioi(d) => f(&dense_chains::IoiChain::new(d, config)?),
        Problem::Soi(d) => f(&dense_chains::SoiChain::new(d, config)?),
    }
}

fn adapt_windows(state: &mut ChainState, adaptations: &mut Vec<AdaptationRecord>) {
    for (block, tally) in std::mem::take(&mut state.windows) {
        let rate = tally.rate();
        if let Some(k) = block.strip_prefix("alg1_").and_then(|k| k.parse::<usize>().ok()) {
            let cap = state.last_direction_norm[k];
            let before = state.c[k];
            let after = adapt_c(before, rate, cap);
            state.c[k] = after;
            adaptations.push(AdaptationRecord {
                iteration: state.iteration,
                component: k,
                rate,
                c_before: before,
                c_after: after,
                cap,
            });
        } else {
            let s = state.rw_scale(&block);
            let s = if rate < 0.2 {
                s * 0.8
            } else if rate > 0.4 {
                s * 1.25
            } else {
                s
            };
            state.rw_scales.insert(block, s);
        }
    }
}

fn drive(sweep: &dyn Sweep, config: &ChainConfig, resume: Option<Checkpoint>) -> Result<ChainOutput> {
    let (mut state, mut rng, mut draws, mut adaptations) = match resume {
        Some(ck) => (ck.state, ck.rng.restore()?, ck.draws, ck.adaptations),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let state = sweep.init(&mut rng)?;
            (state, rng, DrawStore::new(sweep.surfaces()), Vec::new())
        }
    };
    let hash = config_hash(config)?;
    let total = config.total_iterations();
    while state.iteration < total {
        let before = state.clone();
        let rng_before = RngState::capture(&rng);
        if let Err(e) = sweep.step(&mut state, &mut rng).and_then(|_| state.validate()) {
            let iteration = before.iteration;
            let checkpoint = match &config.checkpoint_dir {
                Some(dir) => {
                    let ck = Checkpoint {
                        state: before,
                        rng: rng_before,
                        draws,
                        adaptations,
                    };
                    let path = dir.join(format!("failed-{iteration}.ckpt"));
                    save_checkpoint(&path, &hash, &ck).ok().map(|_| path)
                }
                None => None,
            };
            return Err(PingError::ChainFailed {
                iteration,
                message: e.to_string(),
                checkpoint,
            });
        }
        let it = state.iteration;
        if it < config.burnin {
            if (it + 1) % config.adapt_window == 0 {
                adapt_windows(&mut state, &mut adaptations);
            }
        } else if (it - config.burnin).is_multiple_of(config.thin) {
            draws.push(&state.betas);
        }
        if it + 1 == config.burnin {
            state.windows.clear();
        }
        state.iteration += 1;
        if let (Some(dir), Some(every)) = (&config.checkpoint_dir, config.checkpoint_every) {
            if state.iteration % every == 0 && state.iteration < total {
                let ck = Checkpoint {
                    state: state.clone(),
                    rng: RngState::capture(&rng),
                    draws: draws.clone(),
                    adaptations: adaptations.clone(),
                };
                save_checkpoint(&dir.join("latest.ckpt"), &hash, &ck)?;
            }
        }
    }
    let summaries = draws.summarize(config.credible_level, &state.betas);
    let acceptance = state.tallies.iter().map(|(k, t)| (k.clone(), t.rate())).collect();
    Ok(ChainOutput {
        summaries,
        acceptance,
        adaptations,
        stored_draws: draws.len(),
        final_state: state,
    })
}

/// Matérn parameters of component `k` of a PING surface.
///
/// Component 0 carries the surface's total variance; the others have unit
/// variance. All share the range and smoothness and have no nugget.
pub fn ping_component_theta(surface: &crate::covariance::ReparamMaternParams, k: usize) -> crate::covariance::ReparamMaternParams {
    crate::covariance::ReparamMaternParams {
        total_var: if k == 0 { surface.total_var } else { 1.0 },
        spatial_frac: 1.0,
        range: surface.range,
        smoothness: surface.smoothness,
    }
}
