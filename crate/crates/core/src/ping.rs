//! The PING process: pointwise products of independent Gaussian processes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::MaternParams;
use crate::error::{param_err, PingError, Result};
use crate::exec::{map_range, Execution};
use crate::grid::GridSpec;
use crate::linalg::CirculantOperator;

/// Largest embedding padding factor tried for component kernels.
const MAX_EMBED_FACTOR: usize = 6;

/// `q` lattice fields and their scaled pointwise product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingField {
    scale: f64,
    components: Vec<Vec<f64>>,
    product: Vec<f64>,
}

impl PingField {
    pub fn new(scale: f64, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return param_err("a PING field needs at least one component");
        }
        if !(scale.is_finite() && scale > 0.0) {
            return param_err(format!("scale must be positive, got {scale}"));
        }
        let n = components[0].len();
        if components.iter().any(|c| c.len() != n) {
            return Err(PingError::Dimension("components differ in length".into()));
        }
        let mut field = Self {
            scale,
            components,
            product: Vec::new(),
        };
        field.product = field.recompute_product();
        Ok(field)
    }

    pub fn q(&self) -> usize {
        self.components.len()
    }

    pub fn len(&self) -> usize {
        self.product.len()
    }

    pub fn is_empty(&self) -> bool {
        self.product.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Cached `σ Π_k β_k(v)`.
    pub fn product(&self) -> &[f64] {
        &self.product
    }

    /// Replace component `k` and refresh the product cache.
    pub fn set_component(&mut self, k: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(PingError::Dimension(format!(
                "component of length {} for a field of {}",
                values.len(),
                self.len()
            )));
        }
        self.components[k] = values;
        self.product = self.recompute_product();
        Ok(())
    }

    /// `σ Π_{j≠k} β_j(v)`: the fixed factor multiplying component `k`.
    pub fn others_product(&self, k: usize) -> Vec<f64> {
        (0..self.len())
            .map(|v| {
                self.components
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .fold(self.scale, |acc, (_, c)| acc * c[v])
            })
            .collect()
    }

    fn recompute_product(&self) -> Vec<f64> {
        (0..self.components[0].len())
            .map(|v| self.components.iter().fold(self.scale, |acc, c| acc * c[v]))
            .collect()
    }

    /// Largest absolute gap between the cache and a fresh product.
    pub fn cache_error(&self) -> f64 {
        self.recompute_product()
            .iter()
            .zip(&self.product)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unit-variance Matérn component kernel, `q` and the overall variance `σ²`.
///
/// The variance is carried by component 1; components 2..q have variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PingKernelSpec {
    pub q: usize,
    pub variance: f64,
    pub range: f64,
    pub smoothness: f64,
}

impl PingKernelSpec {
    pub fn new(q: usize, variance: f64, range: f64, smoothness: f64) -> Result<Self> {
        let spec = Self {
            q,
            variance,
            range,
            smoothness,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return param_err("q must be at least 1");
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return param_err(format!("variance must be nonnegative, got {}", self.variance));
        }
        self.component_params(0).map(|_| ())
    }

    /// Zero-nugget Matérn parameters for component `k` (0-based).
    pub fn component_params(&self, k: usize) -> Result<MaternParams> {
        let sill = if k == 0 { self.variance } else { 1.0 };
        MaternParams::new(0.0, sill, self.range, self.smoothness)
    }
}

/// Reusable sampler for a fixed kernel and grid.
#[derive(Debug, Clone)]
pub struct PingSampler {
    spec: PingKernelSpec,
    unit: CirculantOperator,
}

impl PingSampler {
    pub fn new(spec: PingKernelSpec, grid: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let unit = CirculantOperator::from_matern_auto(grid, &spec.component_params(1)?, MAX_EMBED_FACTOR)?;
        Ok(Self { spec, unit })
    }

    pub fn spec(&self) -> &PingKernelSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PingField {
        let sd1 = self.spec.variance.sqrt();
        let components = (0..self.spec.q)
            .map(|k| {
                let mut c = self.unit.draw(rng);
                if k == 0 {
                    c.iter_mut().for_each(|x| *x *= sd1);
                }
                c
            })
            .collect();
        PingField::new(1.0, components).expect("components share the grid")
    }
}

/// Draw one PING field: `q` independent GP draws and their product.
pub fn sample_ping<R: Rng + ?Sized>(
    spec: &PingKernelSpec,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<PingField> {
    Ok(PingSampler::new(*spec, grid)?.sample(rng))
}

/// `E[β(v)^k] = [(k-1)!!]^q` for even `k`, zero for odd `k`.
pub fn marginal_moment(k: i64, q: u32) -> Result<f64> {
    if k < 0 {
        return param_err(format!("moment order must be nonnegative, got {k}"));
    }
    if k % 2 == 1 {
        return Ok(0.0);
    }
    let dfact: f64 = (1..k).step_by(2).map(|j| j as f64).product();
    Ok(dfact.powi(q as i32))
}

/// Marginal excess kurtosis `3^q - 3`.
pub fn marginal_kurtosis(q: u32) -> Result<f64> {
    if q < 1 {
        return param_err("q must be at least 1");
    }
    Ok(3f64.powi(q as i32) - 3.0)
}

/// Mardia excess kurtosis of a bivariate product of `q` independent
/// bivariate normal pairs with squared correlation `m`.
pub fn bivariate_kurtosis(q: u32, m: f64) -> Result<f64> {
    if q < 1 {
        return param_err("q must be at least 1");
    }
    if !(0.0..1.0).contains(&m) {
        if m >= 1.0 {
            return Err(PingError::Degenerate(format!(
                "squared correlation {m} makes the covariance singular"
            )));
        }
        return param_err(format!("squared correlation must be in [0, 1), got {m}"));
    }
    if q == 1 {
        return Ok(0.0);
    }
    let qi = q as i32;
    let mq = m.powi(qi);
    let a = (1.0 + 2.0 * m) / 3.0;
    let bracket = 1.0 + 2.0 * (a * m).powi(qi) + a.powi(qi) - 4.0 * mq;
    Ok(2.0 * 3f64.powi(qi) / (1.0 - mq).powi(2) * bracket - 8.0)
}

/// `σ² K^q`.
pub fn ping_covariance(k_value: f64, q: u32, variance: f64) -> Result<f64> {
    if !(k_value.abs() <= 1.0) {
        return param_err(format!("correlation must be in [-1, 1], got {k_value}"));
    }
    Ok(variance * k_value.powi(q as i32))
}

/// `ρ q^{-1/ν}`: the range at which a `q`-fold product decorrelates like a single GP of range `ρ`.
pub fn effective_range(range: f64, power: f64, q: u32) -> Result<f64> {
    check_range_args(range, power, q)?;
    Ok(range * (q as f64).powf(-1.0 / power))
}

/// `ρ q^{1/ν}`, the inverse of [`effective_range`].
pub fn compensated_range(range: f64, power: f64, q: u32) -> Result<f64> {
    check_range_args(range, power, q)?;
    Ok(range * (q as f64).powf(1.0 / power))
}

fn check_range_args(range: f64, power: f64, q: u32) -> Result<()> {
    if !(range > 0.0 && power > 0.0 && q >= 1) {
        return param_err(format!("need ρ > 0, ν > 0, q ≥ 1 (got {range}, {power}, {q})"));
    }
    Ok(())
}

/// Point estimate with a Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

fn batch_se(values: &[f64]) -> f64 {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

fn mardia_point(data: &[f64], p: usize) -> Result<f64> {
    let n = data.len() / p;
    if n <= p {
        return Err(PingError::Degenerate(format!("{n} samples in dimension {p}")));
    }
    let mut mean = vec![0.0; p];
    for row in data.chunks_exact(p) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut c = vec![0.0; p];
    for row in data.chunks_exact(p) {
        for j in 0..p {
            c[j] = row[j] - mean[j];
        }
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    cov /= n as f64;
    let inv = cov
        .cholesky()
        .ok_or_else(|| PingError::Degenerate("sample covariance is singular".into()))?
        .inverse();
    let mut acc = 0.0;
    for row in data.chunks_exact(p) {
        for j in 0..p {
            c[j] = row[j] - mean[j];
        }
        let mut d2 = 0.0;
        for i in 0..p {
            for j in 0..p {
                d2 += c[i] * inv[(i, j)] * c[j];
            }
        }
        acc += d2 * d2;
    }
    Ok(acc / n as f64 - (p * (p + 2)) as f64)
}

/// Mardia excess kurtosis of row-major samples in dimension `p`.
///
/// The standard error comes from `batches` equal batches.
pub fn mardia_kurtosis(data: &[f64], p: usize, batches: usize) -> Result<McEstimate> {
    if p == 0 || !data.len().is_multiple_of(p) {
        return Err(PingError::Dimension(format!(
            "{} values do not split into rows of {p}",
            data.len()
        )));
    }
    if batches < 2 {
        return param_err("at least two batches are needed");
    }
    let n = data.len() / p;
    let size = n / batches;
    let per_batch: Vec<f64> = (0..batches)
        .map(|b| mardia_point(&data[b * size * p..(b + 1) * size * p], p))
        .collect::<Result<_>>()?;
    Ok(McEstimate {
        value: mardia_point(data, p)?,
        se: batch_se(&per_batch),
    })
}

/// Sample excess kurtosis `m₄/m₂² - 3` of pooled scalar draws, with batch-means SE.
pub fn sample_excess_kurtosis(values: &[f64], batches: usize) -> Result<McEstimate> {
    mardia_kurtosis(values, 1, batches)
}

/// Sample raw moment `mean(x^k)` with its naive standard error.
pub fn sample_moment(values: &[f64], k: i32) -> McEstimate {
    let n = values.len() as f64;
    let pows: Vec<f64> = values.iter().map(|x| x.powi(k)).collect();
    let mean = pows.iter().sum::<f64>() / n;
    let var = pows.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McEstimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

/// Sample skewness `m₃ / m₂^{3/2}`.
pub fn sample_skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Pearson correlation of paired draws with a batch-means SE.
pub fn sample_correlation(x: &[f64], y: &[f64], batches: usize) -> Result<McEstimate> {
    if x.len() != y.len() {
        return Err(PingError::Dimension("paired samples differ in length".into()));
    }
    fn corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx).powi(2);
            syy += (b - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }
    if batches < 2 {
        return param_err("at least two batches are needed");
    }
    let size = x.len() / batches;
    let per: Vec<f64> = (0..batches)
        .map(|b| corr(&x[b * size..(b + 1) * size], &y[b * size..(b + 1) * size]))
        .collect();
    Ok(McEstimate {
        value: corr(x, y),
        se: batch_se(&per),
    })
}

/// Row-major draws of `P_q = Π_{k=1}^q Z_k` for iid `Z_k ~ N(0, Σ)`.
///
/// Work is split into `chunks` independent streams derived from `seed`, so
/// the result does not depend on the execution mode.
pub fn simulate_product_normals(
    cov: &DMatrix<f64>,
    q: usize,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let p = cov.nrows();
    if p == 0 || cov.ncols() != p {
        return Err(PingError::Dimension("covariance must be square".into()));
    }
    if q == 0 {
        return param_err("q must be at least 1");
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| PingError::Degenerate("covariance is not positive definite".into()))?;
    let l = chol.l();
    const CHUNK: usize = 1 << 14;
    let chunks = n.div_ceil(CHUNK);
    let parts = map_range(exec, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        let rows = CHUNK.min(n - c * CHUNK);
        let mut out = vec![1.0; rows * p];
        let mut z = vec![0.0; p];
        for r in 0..rows {
            for _ in 0..q {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..p {
                    let x: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                    out[r * p + i] *= x;
                }
            }
        }
        out
    });
    Ok(parts.concat())
}

/// Monte Carlo Mardia kurtosis of bivariate products with squared correlation `m`.
pub fn monte_carlo_bivariate_kurtosis(
    q: usize,
    m: f64,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<McEstimate> {
    let rho = m.sqrt();
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let draws = simulate_product_normals(&cov, q, n, seed, exec)?;
    mardia_kurtosis(&draws, 2, 100)
}
