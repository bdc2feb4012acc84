//! Dense Gibbs samplers for image-on-image and scalar-on-image regression.

use std::cell::RefCell;
use std::rc::Rc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use super::gram::{MaternGram, PRIOR_JITTER};
use super::kernels::{gibbs_ping_component, gibbs_total_variance, metropolis_matern, GammaPrior, LinearGaussianTerms};
use super::state::ChainState;
use super::{ping_component_theta, ChainConfig, Sweep};
use crate::covariance::{MaternParams, ReparamMaternParams};
use crate::dense::{cholesky, draw_from_covariance, log_det, standard_normal_vec, Chol};
use crate::error::{PingError, Result};
use crate::models::{ImageOnImageData, ScalarOnImageData};
use crate::ping::PingField;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor and log-determinant of a correlation-shaped matrix.
struct Factor {
    matrix: DMatrix<f64>,
    chol: Chol,
    log_det: f64,
}

impl Factor {
    fn new(m: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(m)?;
        let log_det = log_det(&chol);
        Ok(Self {
            matrix: m.clone(),
            chol,
            log_det,
        })
    }

    /// `xᵀ M⁻¹ x`.
    fn quad(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        self.chol
            .l_dirty()
            .solve_lower_triangular(&v)
            .expect("cholesky factor is nonsingular")
            .norm_squared()
    }

    /// `Σ log N(x | 0, s M)` over `xs`.
    fn loglik(&self, xs: &[&[f64]], s: f64) -> f64 {
        let n = self.chol.l_dirty().nrows() as f64;
        xs.iter()
            .map(|x| -0.5 * (n * (LN_2PI + s.ln()) + self.log_det + self.quad(x) / s))
            .sum()
    }
}

/// Small cache of unit-sill Matérn factors keyed by `(φ, ν)`.
struct FactorCache {
    gram: MaternGram,
    entries: RefCell<Vec<((u64, u64), Rc<Factor>)>>,
}

impl FactorCache {
    const SLOTS: usize = 24;

    fn new(gram: MaternGram) -> Self {
        Self {
            gram,
            entries: RefCell::new(Vec::new()),
        }
    }

    /// Factor of `M_ν(h/φ) + jitter·I`.
    fn get(&self, range: f64, smoothness: f64) -> Result<Rc<Factor>> {
        let key = (range.to_bits(), smoothness.to_bits());
        if let Some((_, f)) = self.entries.borrow().iter().find(|(k, _)| *k == key) {
            return Ok(f.clone());
        }
        let theta = MaternParams::new(0.0, 1.0, range, smoothness)?;
        let f = Rc::new(Factor::new(&self.gram.covariance(&theta, PRIOR_JITTER)?)?);
        let mut entries = self.entries.borrow_mut();
        if entries.len() == Self::SLOTS {
            entries.remove(0);
        }
        entries.push((key, f.clone()));
        Ok(f)
    }

    /// Factor of the unit-total-variance Matérn `(1-ζ²) I + ζ² M + jitter ζ² I`.
    fn standardized(&self, theta: &ReparamMaternParams) -> Result<Factor> {
        let unit = ReparamMaternParams { total_var: 1.0, ..*theta };
        Factor::new(&self.gram.covariance(&unit.dereparameterize(), PRIOR_JITTER)?)
    }
}

fn ping_loglik(cache: &FactorCache, field: &PingField, theta: &ReparamMaternParams) -> Result<f64> {
    let f = cache.get(theta.range, theta.smoothness)?;
    Ok((0..field.q())
        .map(|k| f.loglik(&[field.component(k)], ping_component_theta(theta, k).total_var))
        .sum())
}

fn prior_draw(cache: &FactorCache, theta: &ReparamMaternParams, q: usize, rng: &mut ChaCha8Rng) -> Result<PingField> {
    let f = cache.get(theta.range, theta.smoothness)?;
    let comps = (0..q)
        .map(|k| {
            let s = ping_component_theta(theta, k).total_var.sqrt();
            draw_from_covariance(&f.chol, rng).iter().map(|x| s * x).collect()
        })
        .collect();
    PingField::new(1.0, comps)
}

fn placeholder_theta() -> ReparamMaternParams {
    ReparamMaternParams {
        total_var: 1.0,
        spatial_frac: 0.5,
        range: 1.0,
        smoothness: 1.0,
    }
}

fn update_ping_theta(
    cache: &FactorCache,
    state: &mut ChainState,
    j: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let block = format!("theta_ping_{j}");
    let field = &state.betas[j];
    let (th, acc) = metropolis_matern(
        &state.theta_ping[j],
        false,
        state.rw_scale(&block),
        |th| ping_loglik(cache, field, th),
        rng,
    )?;
    state.theta_ping[j] = th;
    state.tally(&block, acc);
    let f = cache.get(th.range, th.smoothness)?;
    let wss = f.quad(state.betas[j].component(0));
    let n = state.betas[j].len();
    state.theta_ping[j].total_var = gibbs_total_variance(wss, n, GammaPrior::default(), rng)?;
    Ok(())
}

/// Scalar-on-image chain: Matheron-style exact draws for each component.
pub(crate) struct SoiChain<'a> {
    data: &'a ScalarOnImageData,
    config: &'a ChainConfig,
    design: DMatrix<f64>,
    cache: FactorCache,
}

impl<'a> SoiChain<'a> {
    pub fn new(data: &'a ScalarOnImageData, config: &'a ChainConfig) -> Result<Self> {
        data.validate()?;
        let n = data.grid.len();
        if n > config.dense_ceiling {
            return Err(PingError::Precondition(format!(
                "{n} pixels exceed the dense ceiling {}",
                config.dense_ceiling
            )));
        }
        let points: Vec<Vec<f64>> = (0..n).map(|i| data.grid.point(i)[..data.grid.ndim()].to_vec()).collect();
        Ok(Self {
            data,
            config,
            design: data.design(),
            cache: FactorCache::new(MaternGram::new(&points)?),
        })
    }

    /// Exact draw of component `k` given the others, via `u + C Φᵀ (Φ C Φᵀ + I)⁻¹ (y/σ - Φu - δ)`.
    fn draw_component(&self, state: &ChainState, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let field = &state.betas[0];
        let theta = ping_component_theta(&state.theta_ping[0], k);
        let f = self.cache.get(theta.range, theta.smoothness)?;
        let s = theta.total_var;
        let sigma = state.noise_var.sqrt();
        let b = field.others_product(k);
        let n_obs = self.design.nrows();
        let mut phi = self.design.clone();
        for (v, mut col) in phi.column_iter_mut().enumerate() {
            col *= b[v] / sigma;
        }
        let l = f.chol.l();
        let u = (&l * standard_normal_vec(l.nrows(), rng)) * s.sqrt();
        let delta = standard_normal_vec(n_obs, rng);
        let phi_r = &phi * &f.matrix;
        let mut a = (&phi_r * phi.transpose()) * s;
        for i in 0..n_obs {
            a[(i, i)] += 1.0;
        }
        let y = DVector::from_column_slice(&self.data.responses) / sigma;
        let rhs = y - &phi * &u - delta;
        let w = cholesky(&a)?.solve(&rhs);
        let draw = u + phi_r.transpose() * w * s;
        Ok(draw.iter().copied().collect())
    }
}

impl Sweep for SoiChain<'_> {
    fn surfaces(&self) -> usize {
        1
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Result<ChainState> {
        let theta = ReparamMaternParams::new(1.0, 1.0, 1.0, 1.0)?;
        let field = prior_draw(&self.cache, &theta, self.config.q, rng)?;
        let y = &self.data.responses;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len().max(2) as f64;
        Ok(ChainState {
            iteration: 0,
            alpha: Vec::new(),
            betas: vec![field],
            theta_error: placeholder_theta(),
            theta_intercept: placeholder_theta(),
            theta_ping: vec![theta],
            noise_var: var.max(1e-6),
            gamma: Vec::new(),
            sigma_gamma: Vec::new(),
            re_scale: 1.0,
            completed: Vec::new(),
            c: Vec::new(),
            last_direction_norm: Vec::new(),
            rw_scales: Default::default(),
            tallies: Default::default(),
            windows: Default::default(),
        })
    }

    fn step(&self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
        for k in 0..self.config.q {
            let draw = self.draw_component(state, k, rng)?;
            state.betas[0].set_component(k, draw)?;
        }
        update_ping_theta(&self.cache, state, 0, rng)?;
        let beta = DVector::from_column_slice(state.betas[0].product());
        let fitted = &self.design * beta;
        let rss: f64 = fitted
            .iter()
            .zip(&self.data.responses)
            .map(|(f, y)| (y - f).powi(2))
            .sum();
        state.noise_var = gibbs_total_variance(rss, self.data.responses.len(), GammaPrior::default(), rng)?;
        Ok(())
    }
}

/// Image-on-image chain with dense full conditionals on the observed support.
pub(crate) struct IoiChain<'a> {
    data: &'a ImageOnImageData,
    config: &'a ChainConfig,
    cache: FactorCache,
}

impl<'a> IoiChain<'a> {
    pub fn new(data: &'a ImageOnImageData, config: &'a ChainConfig) -> Result<Self> {
        data.validate()?;
        if !data.support.is_complete() {
            return Err(PingError::Precondition("image-on-image chains need complete images".into()));
        }
        let n = data.support.len();
        if n > config.dense_ceiling {
            return Err(PingError::Precondition(format!(
                "{n} locations exceed the dense ceiling {}",
                config.dense_ceiling
            )));
        }
        let points: Vec<Vec<f64>> = (0..n).map(|i| data.support.point(i)).collect();
        Ok(Self {
            data,
            config,
            cache: FactorCache::new(MaternGram::new(&points)?),
        })
    }

    fn n_loc(&self) -> usize {
        self.data.support.len()
    }

    fn error_factor(&self, theta: &ReparamMaternParams) -> Result<Factor> {
        Factor::new(&self.cache.gram.covariance(&theta.dereparameterize(), PRIOR_JITTER)?)
    }

    /// `Y_i - α - Σ_{j ∉ skip} X_ij β_j`.
    fn residuals(&self, state: &ChainState, skip: Option<usize>, with_alpha: bool) -> Vec<Vec<f64>> {
        (0..self.data.n_images())
            .map(|i| {
                (0..self.n_loc())
                    .map(|v| {
                        let mut r = self.data.images[i][v];
                        if with_alpha {
                            r -= state.alpha[v];
                        }
                        for (j, b) in state.betas.iter().enumerate() {
                            if Some(j) != skip {
                                r -= self.data.predictors[i][j][v] * b.product()[v];
                            }
                        }
                        r
                    })
                    .collect()
            })
            .collect()
    }
}

impl Sweep for IoiChain<'_> {
    fn surfaces(&self) -> usize {
        self.data.n_predictors()
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Result<ChainState> {
        let nl = self.n_loc();
        let n = self.data.n_images();
        let alpha: Vec<f64> = (0..nl)
            .map(|v| self.data.images.iter().map(|y| y[v]).sum::<f64>() / n as f64)
            .collect();
        let mut rss = 0.0;
        for y in &self.data.images {
            for v in 0..nl {
                rss += (y[v] - alpha[v]).powi(2);
            }
        }
        let error_total = (rss / (nl * n.saturating_sub(1).max(1)) as f64).max(1e-8);
        let alpha_total = (alpha.iter().map(|a| a * a).sum::<f64>() / nl as f64).max(1e-3);
        let theta = ReparamMaternParams::new(1.0, 1.0, 1.0, 1.0)?;
        let p = self.data.n_predictors();
        let betas = (0..p)
            .map(|_| prior_draw(&self.cache, &theta, self.config.q, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChainState {
            iteration: 0,
            alpha,
            betas,
            theta_error: ReparamMaternParams::new(error_total, 0.25, 1.0, 1.0)?,
            theta_intercept: ReparamMaternParams::new(alpha_total, 0.5, 1.0, 1.0)?,
            theta_ping: vec![theta; p],
            noise_var: 1.0,
            gamma: Vec::new(),
            sigma_gamma: Vec::new(),
            re_scale: 1.0,
            completed: Vec::new(),
            c: Vec::new(),
            last_direction_norm: Vec::new(),
            rw_scales: Default::default(),
            tallies: Default::default(),
            windows: Default::default(),
        })
    }

    fn step(&self, state: &mut ChainState, rng: &mut ChaCha8Rng) -> Result<()> {
        let nl = self.n_loc();
        let n = self.data.n_images();
        let err = self.error_factor(&state.theta_error)?;
        let err_inv = err.chol.inverse();

        // intercept
        let mut acc = DVector::zeros(nl);
        for r in self.residuals(state, None, false) {
            acc += DVector::from_vec(r);
        }
        let intercept = Factor::new(&self.cache.gram.covariance(&state.theta_intercept.dereparameterize(), PRIOR_JITTER)?)?;
        let precision = &err_inv * n as f64 + intercept.chol.inverse();
        let alpha = crate::dense::draw_from_precision(&cholesky(&precision)?, &(&err_inv * acc), rng);
        state.alpha = alpha.iter().copied().collect();

        // coefficient surfaces
        for j in 0..state.betas.len() {
            let resid: Vec<DVector<f64>> = self
                .residuals(state, Some(j), true)
                .into_iter()
                .map(DVector::from_vec)
                .collect();
            let weighted: Vec<DVector<f64>> = resid.iter().map(|r| &err_inv * r).collect();
            let prior = self.cache.get(state.theta_ping[j].range, state.theta_ping[j].smoothness)?;
            let prior_inv = prior.chol.inverse();
            for k in 0..self.config.q {
                let b = state.betas[j].others_product(k);
                let mut outer = DMatrix::zeros(nl, nl);
                let mut rhs = DVector::zeros(nl);
                for i in 0..n {
                    let x = &self.data.predictors[i][j];
                    let u = DVector::from_fn(nl, |v, _| x[v] * b[v]);
                    outer += &u * u.transpose();
                    rhs += u.component_mul(&weighted[i]);
                }
                let terms = LinearGaussianTerms {
                    precision: err_inv.component_mul(&outer),
                    rhs,
                };
                let s = ping_component_theta(&state.theta_ping[j], k).total_var;
                gibbs_ping_component(&mut state.betas[j], k, &terms, &(&prior_inv / s), rng)?;
            }
        }

        // Matérn blocks
        let resid = self.residuals(state, None, true);
        let resid_refs: Vec<&[f64]> = resid.iter().map(|r| r.as_slice()).collect();
        let (th, acc) = metropolis_matern(
            &state.theta_error,
            true,
            state.rw_scale("theta_error"),
            |th| Ok(self.error_factor(th)?.loglik(&resid_refs, 1.0)),
            rng,
        )?;
        state.theta_error = th;
        state.tally("theta_error", acc);
        let alpha = state.alpha.clone();
        let (th, acc) = metropolis_matern(
            &state.theta_intercept,
            true,
            state.rw_scale("theta_intercept"),
            |th| Ok(self.error_factor(th)?.loglik(&[&alpha], 1.0)),
            rng,
        )?;
        state.theta_intercept = th;
        state.tally("theta_intercept", acc);
        for j in 0..state.betas.len() {
            update_ping_theta(&self.cache, state, j, rng)?;
        }

        // total variances
        let prior = GammaPrior::default();
        let shape = self.cache.standardized(&state.theta_error)?;
        let wss: f64 = resid.iter().map(|r| shape.quad(r)).sum();
        state.theta_error.total_var = gibbs_total_variance(wss, n * nl, prior, rng)?;
        let shape = self.cache.standardized(&state.theta_intercept)?;
        state.theta_intercept.total_var = gibbs_total_variance(shape.quad(&state.alpha), nl, prior, rng)?;
        Ok(())
    }
}
