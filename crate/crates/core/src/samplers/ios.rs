//! Spectral-domain sampler for image-on-scalar regression.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::kernels::{
    gibbs_random_effects, gibbs_total_variance, log_radial_integral, metropolis_accept, metropolis_matern,
    GammaPrior, RandomEffectsTerms,
};
use super::state::ChainState;
use super::{ping_component_theta, ChainConfig, ComponentUpdate, ProposalKind, Sweep};
use crate::covariance::{BSplineBasis, FrequencyTable, ReparamMaternParams};
use crate::error::{PingError, Result};
use crate::linalg::{conditional_impute, pcg_solve, CirculantOperator, FnOperator, PcgConfig};
use crate::models::ImageOnScalarData;
use crate::ping::PingField;
use crate::spectral::SpectralPlan;

/// Magnitude below which the fixed factor is clamped when forming `Q_i`.
pub const DIVISOR_FLOOR: f64 = 1e-8;

struct Basis {
    spatial: Vec<Vec<f64>>,
    spectral: Vec<Vec<f64>>,
}

/// Image-on-scalar chain state machine.
pub struct IosChain<'a> {
    data: &'a ImageOnScalarData,
    config: &'a ChainConfig,
    plan: SpectralPlan,
    freqs: FrequencyTable,
    t2: f64,
    basis: Option<Basis>,
}

fn spectrum(freqs: &FrequencyTable, theta: &ReparamMaternParams) -> Vec<f64> {
    freqs.adjusted_variances(&theta.dereparameterize())
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `Σ_ω (2 u G - T₂ u²) / (2 λ̃_ε) - Σ_ω β̃² / (2 λ̃_k)` up to terms free of `β_k`.
fn log_target(u: &[f64], beta: &[f64], g: &[f64], t2: f64, error_var: &[f64], prior_var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for w in 0..u.len() {
        acc += (2.0 * u[w] * g[w] - t2 * u[w] * u[w]) / (2.0 * error_var[w]) - beta[w] * beta[w] / (2.0 * prior_var[w]);
    }
    acc
}

fn times_weighted_sum(residuals: &[Vec<f64>], times: &[f64]) -> Vec<f64> {
    let mut tr = vec![0.0; residuals.first().map_or(0, |r| r.len())];
    for (r, &t) in residuals.iter().zip(times) {
        for (acc, x) in tr.iter_mut().zip(r) {
            *acc += t * x;
        }
    }
    tr
}

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Log acceptance ratio of the Gibbs-guided Metropolis move for component `k`.
///
/// `residuals[i] = Y_i - α` (minus any random effects), `others` is the product
/// of the remaining components, and the variances are the adjusted spectra of
/// the error and of the component's prior. The value is the log of the
/// posterior ratio of `candidate` to `current` with everything else held fixed.
#[allow(clippy::too_many_arguments)]
pub fn algorithm1_log_ratio(
    plan: &SpectralPlan,
    residuals: &[Vec<f64>],
    times: &[f64],
    others: &[f64],
    current: &[f64],
    candidate: &[f64],
    error_var: &[f64],
    prior_var: &[f64],
) -> f64 {
    let t2: f64 = times.iter().map(|t| t * t).sum();
    let g = plan.forward_raw(&times_weighted_sum(residuals, times));
    let lt = |beta: &[f64]| {
        let u = plan.forward_raw(&product(others, beta));
        log_target(&u, &plan.forward_raw(beta), &g, t2, error_var, prior_var)
    };
    lt(candidate) - lt(current)
}

/// Likelihood and prior terms of one PING component given everything else.
pub struct ComponentTerms<'s> {
    /// Product of the other components.
    pub others: &'s [f64],
    /// Coefficients of `Σ t_i (Y_i - α)`.
    pub g: &'s [f64],
    pub t2: f64,
    pub error_var: &'s [f64],
    pub prior_var: &'s [f64],
}

/// Full-conditional draw of a PING component by perturbation and conjugate gradients.
///
/// The precision is `T₂ D_b Σ_ε⁻¹ D_b + Σ_k⁻¹` with both covariances circulant.
/// `z1` and `z2` are the standard normal perturbations (zero gives the mean).
/// The solve starts from `current` and is preconditioned by the diagonal of the precision.
pub fn conditional_component_draw(
    plan: &SpectralPlan,
    terms: &ComponentTerms<'_>,
    current: &[f64],
    z1: &[f64],
    z2: &[f64],
    pcg: &PcgConfig,
) -> Result<Vec<f64>> {
    let b = terms.others;
    let n = b.len();
    let (t2, ev, pv) = (terms.t2, terms.error_var, terms.prior_var);
    let circulant = |x: &[f64], scale: &dyn Fn(usize) -> f64| {
        let mut c = plan.forward_raw(x);
        for (w, v) in c.iter_mut().enumerate() {
            *v *= scale(w);
        }
        plan.inverse(&c)
    };
    let apply = |x: &[f64]| -> Vec<f64> {
        let e = circulant(&product(b, x), &|w| t2 / ev[w]);
        let p = circulant(x, &|w| 1.0 / pv[w]);
        (0..n).map(|v| b[v] * e[v] + p[v]).collect()
    };
    let data_term: Vec<f64> = (0..n).map(|w| (terms.g[w] + (t2 * ev[w]).sqrt() * z1[w]) / ev[w]).collect();
    let data_term = plan.inverse(&data_term);
    let prior_term = plan.inverse(&(0..n).map(|w| z2[w] / pv[w].sqrt()).collect::<Vec<_>>());
    let pc = apply(current);
    let resid: Vec<f64> = (0..n).map(|v| b[v] * data_term[v] + prior_term[v] - pc[v]).collect();
    let inv_mean = |l: &[f64]| l.iter().map(|x| 1.0 / x).sum::<f64>() / n as f64;
    let (pe, pk) = (inv_mean(ev), inv_mean(pv));
    let jacobi: Vec<f64> = b.iter().map(|x| 1.0 / (t2 * x * x * pe + pk)).collect();
    let precond = FnOperator::new(n, |x: &[f64]| product(&jacobi, x));
    let config = PcgConfig {
        max_iter: Some(pcg.max_iter.unwrap_or(n)),
        ..*pcg
    };
    let (delta, report) = pcg_solve(&FnOperator::new(n, apply), &resid, &precond, &config)?;
    if !report.converged {
        return Err(PingError::Numerical {
            iterations: report.iterations,
            message: format!("component solve stalled at relative residual {:e}", report.relative_residual),
        });
    }
    Ok(current.iter().zip(&delta).map(|(c, d)| c + d).collect())
}

/// Per-iteration quantities shared by all component updates.
struct SweepTerms<'s> {
    tr: &'s [f64],
    g: &'s [f64],
    error_var: &'s [f64],
}

impl<'a> IosChain<'a> {
    pub fn new(data: &'a ImageOnScalarData, config: &'a ChainConfig) -> Result<Self> {
        data.validate()?;
        if data.n_images() < 2 {
            return Err(PingError::Degenerate("need at least two images".into()));
        }
        let t2: f64 = data.times.iter().map(|t| t * t).sum();
        if t2 <= 0.0 {
            return Err(PingError::Degenerate("all covariates are zero".into()));
        }
        let plan = SpectralPlan::new(&data.grid);
        let basis = match config.random_effects {
            Some(per_axis) => {
                let b = BSplineBasis::new(&data.grid, per_axis)?;
                let spatial: Vec<Vec<f64>> = (0..b.len())
                    .map(|j| (0..data.grid.len()).map(|v| b.value(j, v)).collect())
                    .collect();
                let spectral = spatial.iter().map(|z| plan.forward_raw(z)).collect();
                Some(Basis { spatial, spectral })
            }
            None => None,
        };
        Ok(Self {
            data,
            config,
            freqs: FrequencyTable::new(&data.grid),
            plan,
            t2,
            basis,
        })
    }

    fn n_vox(&self) -> usize {
        self.data.grid.len()
    }

    fn offsets(&self, state: &ChainState) -> Option<Vec<Vec<f64>>> {
        let basis = self.basis.as_ref()?;
        Some(
            state
                .gamma
                .iter()
                .map(|g| {
                    let mut off = vec![0.0; self.n_vox()];
                    for (z, &gj) in basis.spatial.iter().zip(g) {
                        for (o, zv) in off.iter_mut().zip(z) {
                            *o += gj * zv;
                        }
                    }
                    off
                })
                .collect(),
        )
    }

    /// `Y_i - α - Zγ_i`, optionally also minus `t_i β`.
    fn residuals(&self, state: &ChainState, offsets: &Option<Vec<Vec<f64>>>, with_beta: bool) -> Vec<Vec<f64>> {
        let beta = state.betas[0].product();
        (0..self.data.n_images())
            .map(|i| {
                let t = if with_beta { self.data.times[i] } else { 0.0 };
                (0..self.n_vox())
                    .map(|v| {
                        let off = offsets.as_ref().map_or(0.0, |o| o[i][v]);
                        state.completed[i][v] - state.alpha[v] - t * beta[v] - off
                    })
                    .collect()
            })
            .collect()
    }

    fn impute(&self, state: &mut ChainState, error_var: &[f64], rng: &mut ChaCha8Rng) -> Result<()> {
        let op = CirculantOperator::from_spectrum(&self.data.grid, error_var.to_vec())?;
        let offsets = self.offsets(state);
        let missing: Vec<usize> = (0..self.n_vox()).filter(|&v| !self.data.observed[v]).collect();
        let beta = state.betas[0].product().to_vec();
        for i in 0..self.data.n_images() {
            let t = self.data.times[i];
            let mean: Vec<f64> = (0..self.n_vox())
                .map(|v| state.alpha[v] + t * beta[v] + offsets.as_ref().map_or(0.0, |o| o[i][v]))
                .collect();
            let (vals, _) = conditional_impute(&mean, &op, &self.data.observed, &self.data.images[i], rng, &self.config.pcg)?;
            for (&v, x) in missing.iter().zip(vals) {
                state.completed[i][v] = x;
            }
        }
        Ok(())
    }

    fn update_alpha(&self, state: &mut ChainState, offsets: &Option<Vec<Vec<f64>>>, error_var: &[f64], rng: &mut ChaCha8Rng) {
        let n = self.data.n_images() as f64;
        let beta = state.betas[0].product();
        let mut acc = vec![0.0; self.n_vox()];
        for i in 0..self.data.n_images() {
            let t = self.data.times[i];
            for (v, a) in acc.iter_mut().enumerate() {
                *a += state.completed[i][v] - t * beta[v] - offsets.as_ref().map_or(0.0, |o| o[i][v]);
            }
        }
        let rt = self.plan.forward_raw(&acc);
        let prior = spectrum(&self.freqs, &state.theta_intercept);
        let z = normals(rt.len(), rng);
        let coef: Vec<f64> = (0..rt.len())
            .map(|w| {
                let prec = n / error_var[w] + 1.0 / prior[w];
                rt[w] / error_var[w] / prec + z[w] / prec.sqrt()
            })
            .collect();
        state.alpha = self.plan.inverse(&coef);
    }

    /// Proposal mean and variance per frequency from the reduced model.
    fn proposal(&self, others: &[f64], beta: &[f64], terms: &SweepTerms<'_>, prior_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t2 = self.t2;
        let s_spatial: Vec<f64> = (0..self.n_vox())
            .map(|v| {
                let b = others[v];
                let guarded = if b.abs() < DIVISOR_FLOOR {
                    DIVISOR_FLOOR.copysign(b)
                } else {
                    b
                };
                let fitted = b * beta[v];
                t2 * fitted / guarded + terms.tr[v] - t2 * fitted
            })
            .collect();
        let s = self.plan.forward_raw(&s_spatial);
        let ev = terms.error_var;
        match self.config.proposal {
            ProposalKind::Weighted => (0..s.len())
                .map(|w| {
                    let prec = t2 / ev[w] + 1.0 / prior_var[w];
                    (s[w] / ev[w] / prec, 1.0 / prec)
                })
                .unzip(),
            ProposalKind::Printed => (0..s.len())
                .map(|w| {
                    let v = 1.0 / (t2 * (1.0 / prior_var[w] + 1.0 / ev[w]));
                    (s[w] / t2 / v, v)
                })
                .unzip(),
        }
    }

    /// `log` density of the unit direction `u` of `N(μ, diag V)`, without constants.
    fn direction_log_density(u: &[f64], mu: &[f64], var: &[f64]) -> f64 {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut c = 0.0;
        for w in 0..u.len() {
            a += u[w] * u[w] / var[w];
            b += u[w] * mu[w] / var[w];
            c += mu[w] * mu[w] / var[w];
        }
        -0.5 * c + log_radial_integral(u.len(), a, b)
    }

    fn algorithm1(
        &self,
        state: &mut ChainState,
        k: usize,
        terms: &SweepTerms<'_>,
        prior_var: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let block = format!("alg1_{k}");
        let field = &state.betas[0];
        let others = field.others_product(k);
        let current = field.component(k).to_vec();
        let cur_coef = self.plan.forward_raw(&current);
        let (mean, var) = self.proposal(&others, &current, terms, prior_var);
        let z = normals(mean.len(), rng);
        let direction: Vec<f64> = (0..mean.len())
            .map(|w| mean[w] + var[w].sqrt() * z[w] - cur_coef[w])
            .collect();
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            state.tally(&block, false);
            return Ok(());
        }
        state.last_direction_norm[k] = norm;
        let unit: Vec<f64> = direction.iter().map(|d| d / norm).collect();
        let c = state.c[k];
        let cand_coef: Vec<f64> = cur_coef.iter().zip(&unit).map(|(b, u)| b + c * u).collect();
        let candidate = self.plan.inverse(&cand_coef);

        let u_cur = self.plan.forward_raw(&product(&others, &current));
        let u_cand = self.plan.forward_raw(&product(&others, &candidate));
        let mut log_r = log_target(&u_cand, &cand_coef, terms.g, self.t2, terms.error_var, prior_var)
            - log_target(&u_cur, &cur_coef, terms.g, self.t2, terms.error_var, prior_var);
        if self.config.hastings {
            let mu: Vec<f64> = mean.iter().zip(&cur_coef).map(|(m, b)| m - b).collect();
            let (mean_back, _) = self.proposal(&others, &candidate, terms, prior_var);
            let mu_back: Vec<f64> = mean_back.iter().zip(&cand_coef).map(|(m, b)| m - b).collect();
            let back: Vec<f64> = unit.iter().map(|u| -u).collect();
            log_r += Self::direction_log_density(&back, &mu_back, &var) - Self::direction_log_density(&unit, &mu, &var);
        }
        let accepted = metropolis_accept(log_r, rng);
        if accepted {
            state.betas[0].set_component(k, candidate)?;
        }
        state.tally(&block, accepted);
        Ok(())
    }

    /// Draw component `k` from its full conditional.
    fn exact_component(
        &self,
        state: &mut ChainState,
        k: usize,
        terms: &SweepTerms<'_>,
        prior_var: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let field = &state.betas[0];
        let b = field.others_product(k);
        let n = b.len();
        let z1 = normals(n, rng);
        let z2 = normals(n, rng);
        let terms = ComponentTerms {
            others: &b,
            g: terms.g,
            t2: self.t2,
            error_var: terms.error_var,
            prior_var,
        };
        let next = conditional_component_draw(&self.plan, &terms, field.component(k), &z1, &z2, &self.config.pcg)?;
        state.betas[0].set_component(k, next)
    }

    fn exact_slope(&self, state: &mut ChainState, terms: &SweepTerms<'_>, prior_var: &[f64], rng: &mut ChaCha8Rng) -> Result<()> {
        let z = normals(terms.g.len(), rng);
        let coef: Vec<f64> = (0..z.len())
            .map(|w| {
                let prec = self.t2 / terms.error_var[w] + 1.0 / prior_var[w];
                terms.g[w] / terms.error_var[w] / prec + z[w] / prec.sqrt()
            })
            .collect();
        state.betas[0].set_component(0, self.plan.inverse(&coef))
    }

    fn update_random_effects(
        &self,
        state: &mut ChainState,
        resid_coef: &[Vec<f64>],
        error_var: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let Some(basis) = &self.basis else { return Ok(()) };
        let j = basis.spectral.len();
        let weighted: Vec<Vec<f64>> = basis
            .spectral
            .iter()
            .map(|z| z.iter().zip(error_var).map(|(a, l)| a / l).collect())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let ztsz = DMatrix::from_fn(j, j, |a, b| dot(&weighted[a], &basis.spectral[b]));
        let ztsr = resid_coef
            .iter()
            .map(|r| DVector::from_iterator(j, weighted.iter().map(|w| dot(w, r))))
            .collect();
        let sigma = DMatrix::from_row_slice(j, j, &state.sigma_gamma);
        let draw = gibbs_random_effects(
            &RandomEffectsTerms { ztsz, ztsr },
            &sigma,
            state.re_scale,
            state.rw_scale("re_scale"),
            GammaPrior::default(),
            rng,
        )?;
        state.gamma = draw.gammas.iter().map(|g| g.iter().copied().collect()).collect();
        state.sigma_gamma = draw.sigma_gamma.transpose().iter().copied().collect();
        state.re_scale = draw.scale;
        state.tally("re_scale", draw.scale_accepted);
        Ok(())
    }
}

impl Sweep for IosChain<'_> {
    fn surfaces(&self) -> usize {
        1
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Result<ChainState> {
        let data = self.data;
        let nv = self.n_vox();
        let n = data.n_images();
        let obs: Vec<usize> = (0..nv).filter(|&v| data.observed[v]).collect();
        if obs.is_empty() {
            return Err(PingError::Degenerate("no observed voxels".into()));
        }
        let mut alpha = vec![0.0; nv];
        let mut slope = vec![0.0; nv];
        for &v in &obs {
            alpha[v] = data.images.iter().map(|y| y[v]).sum::<f64>() / n as f64;
            slope[v] = data.images.iter().zip(&data.times).map(|(y, t)| t * y[v]).sum::<f64>() / self.t2;
        }
        let overall = obs.iter().map(|&v| alpha[v]).sum::<f64>() / obs.len() as f64;
        for v in 0..nv {
            if !data.observed[v] {
                alpha[v] = overall;
            }
        }
        let tbar = data.times.iter().sum::<f64>() / n as f64;
        let mut rss = 0.0;
        for &v in &obs {
            for (y, t) in data.images.iter().zip(&data.times) {
                rss += (y[v] - alpha[v] - (t - tbar) * slope[v]).powi(2);
            }
        }
        let dof = (obs.len() * n.saturating_sub(2)).max(1);
        let error_total = (rss / dof as f64).max(1e-8);
        let alpha_total = (alpha.iter().map(|a| a * a).sum::<f64>() / nv as f64).max(1e-3);
        let completed = data
            .images
            .iter()
            .map(|y| (0..nv).map(|v| if data.observed[v] { y[v] } else { alpha[v] }).collect())
            .collect();

        let q = self.config.q;
        let theta_ping = ReparamMaternParams::new(1.0, 1.0, 1.0, 1.0)?;
        let mut comps = Vec::with_capacity(q);
        for k in 0..q {
            let var = spectrum(&self.freqs, &ping_component_theta(&theta_ping, k));
            let coef: Vec<f64> = var.iter().map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            comps.push(self.plan.inverse(&coef));
        }
        let norms: Vec<f64> = comps.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let j = self.basis.as_ref().map_or(0, |b| b.spatial.len());
        let mut sigma_gamma = vec![0.0; j * j];
        for a in 0..j {
            sigma_gamma[a * j + a] = 1.0;
        }
        Ok(ChainState {
            iteration: 0,
            alpha,
            betas: vec![PingField::new(1.0, comps)?],
            theta_error: ReparamMaternParams::new(error_total, 0.25, 1.0, 1.0)?,
            theta_intercept: ReparamMaternParams::new(alpha_total, 0.5, 1.0, 1.0)?,
            theta_ping: vec![theta_ping],
            noise_var: 1.0,
            gamma: vec![vec![0.0; j]; n],
            sigma_gamma,
            re_scale: 1.0,
            completed,
            c: norms.iter().map(|n| (0.1 * n).max(1e-12)).collect(),
            last_direction_norm: norms,
            rw_scales: Default::default(),
            tallies: Default::default(),
            windows: Default::default(),
        })
    }

    fn step(&self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
        let q = self.config.q;
        let nv = self.n_vox();
        let n = self.data.n_images();
        let error_var = spectrum(&self.freqs, &state.theta_error);

        if !self.data.is_complete() && state.iteration.is_multiple_of(self.config.impute_every) {
            self.impute(state, &error_var, rng)?;
        }
        let offsets = self.offsets(state);
        self.update_alpha(state, &offsets, &error_var, rng);

        let resid = self.residuals(state, &offsets, false);
        let tr = times_weighted_sum(&resid, &self.data.times);
        let g = self.plan.forward_raw(&tr);
        let terms = SweepTerms {
            tr: &tr,
            g: &g,
            error_var: &error_var,
        };
        for k in 0..q {
            let prior_var = spectrum(&self.freqs, &ping_component_theta(&state.theta_ping[0], k));
            if q == 1 && self.config.exact_gp {
                self.exact_slope(state, &terms, &prior_var, rng)?;
            } else if self.config.update == ComponentUpdate::Exact {
                self.exact_component(state, k, &terms, &prior_var, rng)?;
            } else {
                self.algorithm1(state, k, &terms, &prior_var, rng)?;
            }
        }

        let resid_coef: Vec<Vec<f64>> = self
            .residuals(state, &offsets, true)
            .iter()
            .map(|r| self.plan.forward_raw(r))
            .collect();
        let mut ss = vec![0.0; nv];
        for r in &resid_coef {
            for (s, x) in ss.iter_mut().zip(r) {
                *s += x * x;
            }
        }
        let nf = n as f64;
        let freqs = &self.freqs;
        let (th, acc) = metropolis_matern(
            &state.theta_error,
            true,
            state.rw_scale("theta_error"),
            |th| {
                let lam = spectrum(freqs, th);
                Ok(ss.iter().zip(&lam).map(|(s, l)| -0.5 * nf * l.ln() - s / (2.0 * l)).sum())
            },
            rng,
        )?;
        state.theta_error = th;
        state.tally("theta_error", acc);

        let alpha_coef = self.plan.forward_raw(&state.alpha);
        let field_loglik = |coef: &[f64], th: &ReparamMaternParams| -> f64 {
            let lam = spectrum(freqs, th);
            coef.iter().zip(&lam).map(|(c, l)| -0.5 * l.ln() - c * c / (2.0 * l)).sum()
        };
        let (th, acc) = metropolis_matern(
            &state.theta_intercept,
            true,
            state.rw_scale("theta_intercept"),
            |th| Ok(field_loglik(&alpha_coef, th)),
            rng,
        )?;
        state.theta_intercept = th;
        state.tally("theta_intercept", acc);

        let comp_coef: Vec<Vec<f64>> = state.betas[0].components().iter().map(|c| self.plan.forward_raw(c)).collect();
        let (th, acc) = metropolis_matern(
            &state.theta_ping[0],
            false,
            state.rw_scale("theta_ping"),
            |th| {
                Ok(comp_coef
                    .iter()
                    .enumerate()
                    .map(|(k, c)| field_loglik(c, &ping_component_theta(th, k)))
                    .sum())
            },
            rng,
        )?;
        state.theta_ping[0] = th;
        state.tally("theta_ping", acc);

        let prior = GammaPrior::default();
        let shape = freqs.standardized_variances(&state.theta_error);
        let wss: f64 = ss.iter().zip(&shape).map(|(s, l)| s / l).sum();
        state.theta_error.total_var = gibbs_total_variance(wss, n * nv, prior, rng)?;
        let shape = freqs.standardized_variances(&state.theta_intercept);
        let wss: f64 = alpha_coef.iter().zip(&shape).map(|(c, l)| c * c / l).sum();
        state.theta_intercept.total_var = gibbs_total_variance(wss, nv, prior, rng)?;
        let shape = freqs.standardized_variances(&state.theta_ping[0]);
        let wss: f64 = comp_coef[0].iter().zip(&shape).map(|(c, l)| c * c / l).sum();
        state.theta_ping[0].total_var = gibbs_total_variance(wss, nv, prior, rng)?;

        if self.basis.is_some() {
            let error_var = spectrum(freqs, &state.theta_error);
            let resid_coef: Vec<Vec<f64>> = self
                .residuals(state, &None, true)
                .iter()
                .map(|r| self.plan.forward_raw(r))
                .collect();
            self.update_random_effects(state, &resid_coef, &error_var, rng)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::MaternParams;
    use crate::dense::{cholesky, mvn_logpdf};
    use crate::grid::GridSpec;
    use crate::samplers::{run_chain, Problem};
    use rand::SeedableRng;

    fn toy(grid: GridSpec, n: usize, complete: bool, seed: u64) -> ImageOnScalarData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = crate::models::standardize_times(&(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let nv = grid.len();
        let beta: Vec<f64> = (0..nv).map(|v| if v % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let images = times
            .iter()
            .map(|t| (0..nv).map(|v| 0.5 + t * beta[v] + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut observed = vec![true; nv];
        if !complete {
            observed[0] = false;
            observed[nv - 1] = false;
        }
        ImageOnScalarData::new(grid, images, times, observed).unwrap()
    }

    #[test]
    fn log_ratio_matches_dense_oracle() {
        let grid = GridSpec::cube(4, 3).unwrap();
        let plan = SpectralPlan::new(&grid);
        let freqs = FrequencyTable::new(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nv = grid.len();
        let err = MaternParams::new(0.3, 0.7, 1.5, 0.8).unwrap();
        let pri = MaternParams::new(0.0, 1.2, 2.0, 1.1).unwrap();
        let ev = freqs.adjusted_variances(&err);
        let pv = freqs.adjusted_variances(&pri);
        let times = [-1.2, 0.1, 1.1];
        let mut r = || normals(nv, &mut rng);
        let residuals = vec![r(), r(), r()];
        let others = r();
        let current = r();
        let candidate = r();
        let got = algorithm1_log_ratio(&plan, &residuals, &times, &others, &current, &candidate, &ev, &pv);

        let ce = cholesky(&CirculantOperator::from_spectrum(&grid, ev).unwrap().dense()).unwrap();
        let cp = cholesky(&CirculantOperator::from_spectrum(&grid, pv).unwrap().dense()).unwrap();
        let dense = |beta: &[f64]| {
            let xs: Vec<DVector<f64>> = residuals
                .iter()
                .zip(&times)
                .map(|(y, t)| DVector::from_fn(nv, |v, _| y[v] - t * others[v] * beta[v]))
                .collect();
            mvn_logpdf(&xs, &ce) + mvn_logpdf(&[DVector::from_column_slice(beta)], &cp)
        };
        let want = dense(&candidate) - dense(&current);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        let same = algorithm1_log_ratio(&plan, &residuals, &times, &others, &current, &current, &[1.0; 64], &[1.0; 64]);
        assert_eq!(same, 0.0);
    }

    #[test]
    fn conditional_draw_matches_dense_conjugate_oracle() {
        let grid = GridSpec::cube(3, 3).unwrap();
        let plan = SpectralPlan::new(&grid);
        let freqs = FrequencyTable::new(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nv = grid.len();
        let ev = freqs.adjusted_variances(&MaternParams::new(0.2, 0.5, 1.2, 0.9).unwrap());
        let pv = freqs.adjusted_variances(&MaternParams::new(0.0, 0.8, 1.7, 1.3).unwrap());
        let others = normals(nv, &mut rng);
        let tr = normals(nv, &mut rng);
        let current = normals(nv, &mut rng);
        let g = plan.forward_raw(&tr);
        let t2 = 7.5;
        let terms = ComponentTerms {
            others: &others,
            g: &g,
            t2,
            error_var: &ev,
            prior_var: &pv,
        };
        let pcg = PcgConfig {
            tol: 1e-13,
            max_iter: None,
        };
        let zero = vec![0.0; nv];
        let mean = conditional_component_draw(&plan, &terms, &current, &zero, &zero, &pcg).unwrap();

        let se_inv = CirculantOperator::from_spectrum(&grid, ev.iter().map(|l| 1.0 / l).collect())
            .unwrap()
            .dense();
        let sp_inv = CirculantOperator::from_spectrum(&grid, pv.iter().map(|l| 1.0 / l).collect())
            .unwrap()
            .dense();
        let db = DMatrix::from_diagonal(&DVector::from_column_slice(&others));
        let prec = &db * &se_inv * &db * t2 + sp_inv;
        let cov = prec.clone().try_inverse().unwrap();
        let want = &cov * (&db * &se_inv * DVector::from_column_slice(&tr));
        for v in 0..nv {
            assert!((mean[v] - want[v]).abs() < 1e-8, "mean {v}: {} vs {}", mean[v], want[v]);
        }

        // the draw is affine in the perturbations; its covariance is Σ_j c_j c_jᵀ over unit inputs
        let mut got = DMatrix::<f64>::zeros(nv, nv);
        for j in 0..2 * nv {
            let mut z1 = zero.clone();
            let mut z2 = zero.clone();
            if j < nv {
                z1[j] = 1.0;
            } else {
                z2[j - nv] = 1.0;
            }
            let x = conditional_component_draw(&plan, &terms, &current, &z1, &z2, &pcg).unwrap();
            let c = DVector::from_iterator(nv, x.iter().zip(&mean).map(|(a, m)| a - m));
            got += &c * c.transpose();
        }
        let scale = cov.abs().max();
        assert!((got - cov).abs().max() < 1e-8 * scale);
    }

    #[test]
    fn zero_iterations_summarize_initial_state() {
        let data = toy(GridSpec::cube(4, 2).unwrap(), 6, true, 1);
        let cfg = ChainConfig {
            iterations: 0,
            burnin: 0,
            q: 2,
            ..Default::default()
        };
        let out = run_chain(Problem::Ios(&data), &cfg).unwrap();
        assert_eq!(out.stored_draws, 0);
        assert_eq!(out.summaries[0].mean, out.final_state.betas[0].product());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let data = toy(GridSpec::cube(5, 2).unwrap(), 6, false, 2);
        let cfg = ChainConfig {
            iterations: 30,
            burnin: 60,
            q: 3,
            seed: 9,
            hastings: true,
            ..Default::default()
        };
        let a = run_chain(Problem::Ios(&data), &cfg).unwrap();
        let b = run_chain(Problem::Ios(&data), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stored_draws, 30);
        assert!(a.adaptations.iter().all(|r| r.c_after <= r.c_before || r.c_after <= r.cap));
        assert!(a.final_state.betas[0].cache_error() < 1e-12);
    }

    #[test]
    fn random_effects_run() {
        let data = toy(GridSpec::cube(6, 2).unwrap(), 5, true, 3);
        let cfg = ChainConfig {
            iterations: 10,
            burnin: 10,
            q: 1,
            random_effects: Some(4),
            ..Default::default()
        };
        let out = run_chain(Problem::Ios(&data), &cfg).unwrap();
        assert_eq!(out.final_state.gamma[0].len(), 16);
        assert!(out.acceptance.contains_key("re_scale"));
    }
}
