//! Model-agnostic MCMC updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::ReparamMaternParams;
use crate::dense::{cholesky, draw_from_precision, Chol};
use crate::error::{PingError, Result};
use crate::ping::PingField;

/// Iterations per acceptance window for step-length adaptation.
pub const ADAPT_WINDOW: usize = 50;
/// Lower edge of the target acceptance band.
pub const TARGET_LOW: f64 = 0.55;
/// Upper edge of the target acceptance band.
pub const TARGET_HIGH: f64 = 0.70;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Shape and rate of the Gamma prior on inverse variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 0.1, rate: 0.1 }
    }
}

/// New step length from a window acceptance rate.
///
/// Shrinks by 0.9 below the band and grows by 1.1 above it; the result never exceeds `cap`.
pub fn adapt_c(c: f64, window_rate: f64, cap: f64) -> f64 {
    let next = if window_rate < TARGET_LOW {
        0.9 * c
    } else if window_rate > TARGET_HIGH {
        1.1 * c
    } else {
        c
    };
    next.min(cap)
}

/// `min(1, exp(log π(x') - log π(x)))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio.is_nan() {
        0.0
    } else if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Accept with probability `min(1, exp(log_ratio))`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let p = acceptance_probability(log_ratio);
    p >= 1.0 || rng.random::<f64>() < p
}

/// Random-walk Metropolis step on an unconstrained vector.
///
/// Returns the new point, its log target and whether the move was accepted.
pub fn rw_metropolis<R, F>(
    current: &[f64],
    current_log_target: f64,
    scale: f64,
    log_target: F,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, bool)>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> Result<f64>,
{
    let proposal: Vec<f64> = current
        .iter()
        .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = match log_target(&proposal) {
        Ok(v) if v.is_finite() => v,
        // outside the support of the target: reject
        Ok(_) | Err(PingError::Parameter(_)) | Err(PingError::Covariance { .. }) => {
            return Ok((current.to_vec(), current_log_target, false))
        }
        Err(e) => return Err(e),
    };
    if metropolis_accept(lp - current_log_target, rng) {
        Ok((proposal, lp, true))
    } else {
        Ok((current.to_vec(), current_log_target, false))
    }
}

/// Sampled coordinates of a Matérn block: `(logit ζ, log φ, log ν)` or `(log φ, log ν)`.
pub fn to_unconstrained(theta: &ReparamMaternParams, with_zeta: bool) -> Vec<f64> {
    let mut u = Vec::with_capacity(3);
    if with_zeta {
        u.push(theta.logit_zeta());
    }
    u.push(theta.range.ln());
    u.push(theta.smoothness.ln());
    u
}

/// Inverse of [`to_unconstrained`], keeping the total variance (and `ζ²` when absent).
pub fn from_unconstrained(u: &[f64], base: &ReparamMaternParams, with_zeta: bool) -> ReparamMaternParams {
    let (frac, rest) = if with_zeta {
        (ReparamMaternParams::spatial_frac_from_logit(u[0]), &u[1..])
    } else {
        (base.spatial_frac, u)
    };
    ReparamMaternParams {
        total_var: base.total_var,
        spatial_frac: frac,
        range: rest[0].exp(),
        smoothness: rest[1].exp(),
    }
}

/// Independent `N(0,1)` log density of the sampled coordinates.
pub fn standard_normal_log_prior(u: &[f64]) -> f64 {
    u.iter().map(|x| -HALF_LN_2PI - 0.5 * x * x).sum()
}

/// Random-walk Metropolis on a Matérn block against `loglik(θ) + N(0,1)` priors.
pub fn metropolis_matern<R, F>(
    theta: &ReparamMaternParams,
    with_zeta: bool,
    scale: f64,
    loglik: F,
    rng: &mut R,
) -> Result<(ReparamMaternParams, bool)>
where
    R: Rng + ?Sized,
    F: Fn(&ReparamMaternParams) -> Result<f64>,
{
    let u0 = to_unconstrained(theta, with_zeta);
    let target = |u: &[f64]| -> Result<f64> {
        let th = from_unconstrained(u, theta, with_zeta);
        th.validate()?;
        Ok(loglik(&th)? + standard_normal_log_prior(u))
    };
    let lp0 = target(&u0)?;
    let (u, _, accepted) = rw_metropolis(&u0, lp0, scale, target, rng)?;
    Ok((from_unconstrained(&u, theta, with_zeta), accepted))
}

/// Draw a total variance `ϑ²` from its inverse-Gamma full conditional.
///
/// `ϑ⁻² ~ Gamma(a + n/2, b + ½ Σ r²/s)`, where `weighted_ss = Σ r²/s` uses the
/// unit-total-variance shape `s`.
pub fn gibbs_total_variance<R: Rng + ?Sized>(
    weighted_ss: f64,
    n_eff: usize,
    prior: GammaPrior,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = total_variance_posterior(weighted_ss, n_eff, prior)?;
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| PingError::Parameter(format!("gamma({shape}, {rate}): {e}")))?;
    let precision: f64 = g.sample(rng);
    Ok(1.0 / precision.max(f64::MIN_POSITIVE))
}

/// Shape and rate of the posterior on `ϑ⁻²`.
pub fn total_variance_posterior(weighted_ss: f64, n_eff: usize, prior: GammaPrior) -> Result<(f64, f64)> {
    if !(weighted_ss.is_finite() && weighted_ss >= 0.0) {
        return Err(PingError::Parameter(format!("sum of squares {weighted_ss}")));
    }
    Ok((prior.shape + n_eff as f64 / 2.0, prior.rate + weighted_ss / 2.0))
}

/// `Σ ~ IW(df, S)` via the Bartlett decomposition of `Σ⁻¹ ~ W(df, S⁻¹)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(PingError::Parameter(format!("IW needs df > p - 1 (df {df}, p {p})")));
    }
    let scale_inv = cholesky(scale)?.inverse();
    let l = cholesky(&scale_inv)?.l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| PingError::Parameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    Ok(cholesky(&wishart)?.inverse())
}

/// Conjugate pieces of the random-effects model `E_i = Z γ_i + ε_i`.
///
/// `ztsz = Zᵀ Σ_ε⁻¹ Z` and `ztsr[i] = Zᵀ Σ_ε⁻¹ E_i`, however `Σ_ε⁻¹` is applied.
#[derive(Debug, Clone)]
pub struct RandomEffectsTerms {
    pub ztsz: DMatrix<f64>,
    pub ztsr: Vec<DVector<f64>>,
}

/// Mean and covariance of `γ_i | rest`.
pub fn random_effects_conditional(
    terms: &RandomEffectsTerms,
    i: usize,
    sigma_gamma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prec = &terms.ztsz + cholesky(sigma_gamma)?.inverse();
    let chol = cholesky(&prec)?;
    Ok((chol.solve(&terms.ztsr[i]), chol.inverse()))
}

/// Posterior degrees of freedom and scale of `Σ_γ | γ` under `IW(J + 0.1, c/(J + 0.1) I)`.
pub fn sigma_gamma_posterior(gammas: &[DVector<f64>], j: usize, c: f64) -> (f64, DMatrix<f64>) {
    let df0 = j as f64 + 0.1;
    let mut scale = DMatrix::identity(j, j) * (c / df0);
    for g in gammas {
        scale += g * g.transpose();
    }
    (df0 + gammas.len() as f64, scale)
}

/// Log target of `u = log c` given `Σ_γ`, with `c⁻¹ ~ Gamma(a, b)`.
fn re_scale_log_target(u: f64, j: usize, trace_inv: f64, prior: GammaPrior) -> f64 {
    let df0 = j as f64 + 0.1;
    let c = u.exp();
    0.5 * df0 * j as f64 * u - c * trace_inv / (2.0 * df0) - prior.shape * u - prior.rate / c
}

/// Result of one random-effects sweep.
#[derive(Debug, Clone)]
pub struct RandomEffectsDraw {
    pub gammas: Vec<DVector<f64>>,
    pub sigma_gamma: DMatrix<f64>,
    pub scale: f64,
    pub scale_accepted: bool,
}

/// Gibbs for `γ_i`, then `Σ_γ`, then a log-scale Metropolis step for `c`.
pub fn gibbs_random_effects<R: Rng + ?Sized>(
    terms: &RandomEffectsTerms,
    sigma_gamma: &DMatrix<f64>,
    c: f64,
    c_step: f64,
    prior: GammaPrior,
    rng: &mut R,
) -> Result<RandomEffectsDraw> {
    let j = sigma_gamma.nrows();
    let prec = &terms.ztsz + cholesky(sigma_gamma)?.inverse();
    let chol = cholesky(&prec)?;
    let gammas: Vec<DVector<f64>> = terms
        .ztsr
        .iter()
        .map(|r| draw_from_precision(&chol, r, rng))
        .collect();
    let (df, scale) = sigma_gamma_posterior(&gammas, j, c);
    let sigma = sample_inverse_wishart(df, &scale, rng)?;
    let trace_inv = cholesky(&sigma)?.inverse().trace();
    let u0 = c.ln();
    let lp0 = re_scale_log_target(u0, j, trace_inv, prior);
    let (u, _, accepted) = rw_metropolis(
        &[u0],
        lp0,
        c_step,
        |u| Ok(re_scale_log_target(u[0], j, trace_inv, prior)),
        rng,
    )?;
    Ok(RandomEffectsDraw {
        gammas,
        sigma_gamma: sigma,
        scale: u[0].exp(),
        scale_accepted: accepted,
    })
}

/// Data part of a Gaussian full conditional: `Σ Aᵢᵀ Σ⁻¹ Aᵢ` and `Σ Aᵢᵀ Σ⁻¹ yᵢ`.
#[derive(Debug, Clone)]
pub struct LinearGaussianTerms {
    pub precision: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// `β_k | rest ~ N(P⁻¹ rhs, P⁻¹)` with `P = data precision + prior precision`.
pub fn ping_component_conditional(
    terms: &LinearGaussianTerms,
    prior_precision: &DMatrix<f64>,
) -> Result<(DVector<f64>, Chol)> {
    let n = terms.rhs.len();
    if terms.precision.nrows() != n || prior_precision.nrows() != n {
        return Err(PingError::Dimension("conditional pieces differ in size".into()));
    }
    let chol = cholesky(&(&terms.precision + prior_precision)).map_err(|_| PingError::Numerical {
        iterations: 0,
        message: "singular conditional precision".into(),
    })?;
    Ok((chol.solve(&terms.rhs), chol))
}

/// Exact Gibbs draw of component `k`; the field's product cache is refreshed.
pub fn gibbs_ping_component<R: Rng + ?Sized>(
    field: &mut PingField,
    k: usize,
    terms: &LinearGaussianTerms,
    prior_precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let (_, chol) = ping_component_conditional(terms, prior_precision)?;
    let draw = draw_from_precision(&chol, &terms.rhs, rng);
    field.set_component(k, draw.iter().copied().collect())
}

/// `log ∫₀^∞ r^{n-1} exp(-a r²/2 + b r) dr` for `a > 0`.
///
/// Used for the density of the direction of a Gaussian vector.
pub fn log_radial_integral(n: usize, a: f64, b: f64) -> f64 {
    let m = (n as f64) - 1.0;
    let log_f = |r: f64| {
        let power = if m == 0.0 { 0.0 } else { m * r.ln() };
        power - 0.5 * a * r * r + b * r
    };
    let mode = (b + (b * b + 4.0 * a * m).sqrt()) / (2.0 * a);
    let curvature = a + if mode > 0.0 { m / (mode * mode) } else { 0.0 };
    let sd = 1.0 / curvature.sqrt();
    let lo = (mode - 14.0 * sd).max(0.0);
    let hi = mode + 14.0 * sd;
    let steps = 2000;
    let h = (hi - lo) / steps as f64;
    let peak = log_f(if m == 0.0 { mode } else { mode.max(f64::MIN_POSITIVE) });
    let mut acc = 0.0;
    for s in 0..=steps {
        let r = lo + s as f64 * h;
        if r <= 0.0 && m > 0.0 {
            continue;
        }
        let w = if s == 0 || s == steps {
            1.0
        } else if s % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (log_f(r) - peak).exp();
    }
    peak + (acc * h / 3.0).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn adapt_rules() {
        assert_eq!(adapt_c(1.0, 0.6, 10.0), 1.0);
        assert!(adapt_c(1.0, 0.4, 10.0) < 1.0);
        assert!((adapt_c(1.0, 0.9, 10.0) - 1.1).abs() < 1e-15);
        assert_eq!(adapt_c(1.0, 0.9, 1.05), 1.05);
    }

    #[test]
    fn identical_proposal_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (x, _, acc) = rw_metropolis(&[0.3, -1.0], -2.0, 0.0, |_| Ok(-2.0), &mut rng).unwrap();
            assert!(acc);
            assert_eq!(x, vec![0.3, -1.0]);
        }
        assert_eq!(acceptance_probability(0.0), 1.0);
    }

    #[test]
    fn detailed_balance_on_three_states() {
        // symmetric proposal: uniform over the other two states
        let log_pi = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let kernel = |i: usize, j: usize| 0.5 * acceptance_probability(log_pi[j] - log_pi[i]);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let lhs = log_pi[i].exp() * kernel(i, j);
                    let rhs = log_pi[j].exp() * kernel(j, i);
                    assert!((lhs - rhs).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn prior_only_matern_chain_recovers_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut theta = ReparamMaternParams::new(1.0, 0.5, 1.0, 1.0).unwrap();
        let n = 60_000;
        let mut log_phi = Vec::with_capacity(n);
        for _ in 0..n {
            theta = metropolis_matern(&theta, true, 1.2, |_| Ok(0.0), &mut rng).unwrap().0;
            log_phi.push(theta.range.ln());
        }
        let mean = log_phi.iter().sum::<f64>() / n as f64;
        let var = log_phi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // correlated chain: allow roughly 4 effective-sample SEs
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
    }

    #[test]
    fn total_variance_conjugacy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prior = GammaPrior::default();
        // no data: prior mean of the precision is a/b = 1
        let draws: Vec<f64> = (0..20_000)
            .map(|_| 1.0 / gibbs_total_variance(0.0, 0, prior, &mut rng).unwrap())
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((m - 1.0).abs() < 0.1, "prior precision mean {m}");

        let ss = 37.5;
        let (a, b) = total_variance_posterior(ss, 50, prior).unwrap();
        let draws: Vec<f64> = (0..20_000)
            .map(|_| 1.0 / gibbs_total_variance(ss, 50, prior, &mut rng).unwrap())
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let se = (a / (b * b) / draws.len() as f64).sqrt();
        assert!((m - a / b).abs() < 3.0 * se, "{m} vs {}", a / b);

        let small = gibbs_total_variance(0.0, 50, prior, &mut rng).unwrap();
        assert!(small < 0.1);
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let df = 9.0;
        let n = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expected = &scale / (df - 3.0);
        assert!((mean - expected).amax() < 0.02);
    }

    #[test]
    fn sigma_gamma_df_counts_images() {
        let g = vec![DVector::from_element(4, 1.0); 7];
        let (df, scale) = sigma_gamma_posterior(&g, 4, 2.0);
        assert!((df - (4.1 + 7.0)).abs() < 1e-12);
        assert!((scale[(0, 0)] - (2.0 / 4.1 + 7.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_design_gives_prior_random_effects() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let terms = RandomEffectsTerms {
            ztsz: DMatrix::zeros(2, 2),
            ztsr: vec![DVector::zeros(2)],
        };
        let (mean, cov) = random_effects_conditional(&terms, 0, &sigma).unwrap();
        assert!(mean.amax() < 1e-14);
        assert!((cov - sigma).amax() < 1e-12);
    }

    #[test]
    fn radial_integral_closed_form() {
        for &(n, a) in &[(1usize, 1.0f64), (5, 2.0), (400, 0.7), (3000, 5.0)] {
            let half = n as f64 / 2.0;
            let exact = half * (2.0 / a).ln() + ln_gamma(half) - std::f64::consts::LN_2;
            let got = log_radial_integral(n, a, 0.0);
            assert!((got - exact).abs() < 1e-6 * exact.abs().max(1.0), "n={n}: {got} vs {exact}");
        }
        // b ≠ 0, n = 1: ∫ exp(-a r²/2 + b r) dr = √(π/2a) e^{b²/2a} erfc(-b/√(2a))
        let (a, b) = (2.0f64, 1.5f64);
        let exact = ((std::f64::consts::PI / (2.0 * a)).sqrt()
            * (b * b / (2.0 * a)).exp()
            * statrs::function::erf::erfc(-b / (2.0 * a).sqrt()))
        .ln();
        assert!((log_radial_integral(1, a, b) - exact).abs() < 1e-6);
    }
}
