//! Simulation designs and data generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{powered_exponential, MaternParams, ReparamMaternParams};
use crate::error::{PingError, Result};
use crate::grid::GridSpec;
use crate::linalg::{CirculantOperator, Embedding};
use crate::models::{standardize_times, ImageOnImageData, ImageOnScalarData, ScalarOnImageData, Support};
use crate::samplers::{MaternGram, Problem};

const MAX_EMBED_FACTOR: usize = 6;

/// Image-on-scalar bump centres on the `{1..20}³` reference lattice, with their decay rates.
pub const IOS_BUMPS: [([f64; 3], f64); 5] = [
    ([6.0, 14.0, 6.0], 4.0),
    ([6.0, 10.0, 14.0], 1.5),
    ([14.0, 6.0, 14.0], 4.0),
    ([14.0, 14.0, 14.0], 4.0),
    ([6.0, 6.0, 6.0], 4.0),
];

/// Scalar-on-image bump centres on the `{1..20}²` lattice.
pub const SOI_BUMPS: [[f64; 2]; 5] = [[4.0, 16.0], [16.0, 4.0], [4.0, 4.0], [16.0, 16.0], [10.0, 10.0]];

/// Signals below this are set to zero.
pub const SIGNAL_THRESHOLD: f64 = 0.1;

/// Error total variances at SNR 1, 5 and 10.
pub const IOS_ERROR_VARIANCES: [f64; 3] = [0.09, 0.017, 0.009];
pub const IOI_ERROR_VARIANCES: [f64; 3] = [0.57, 0.11, 0.06];
const SNR_LEVELS: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Ios,
    Ioi,
    Soi,
}

impl std::str::FromStr for DesignKind {
    type Err = PingError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ios" => Ok(Self::Ios),
            "ioi" => Ok(Self::Ioi),
            "soi" => Ok(Self::Soi),
            other => Err(PingError::Config(format!("unknown design {other:?}"))),
        }
    }
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ios => "ios",
            Self::Ioi => "ioi",
            Self::Soi => "soi",
        })
    }
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub kind: DesignKind,
    /// Lattice side length (image-on-scalar and scalar-on-image).
    pub grid: usize,
    /// Images (or scalar observations) per replication.
    pub n_obs: usize,
    /// Random locations for image-on-image.
    pub locations: usize,
    pub predictors: usize,
    /// Signal-to-noise level for the image designs.
    pub snr: f64,
    /// Noise variance for scalar-on-image.
    pub noise_var: f64,
    /// Replace the true coefficient by zero.
    pub zero_truth: bool,
    pub seed: u64,
}

impl SimDesign {
    /// Desk-scale defaults: 10³ lattice and 20 images.
    pub fn ios() -> Self {
        Self {
            kind: DesignKind::Ios,
            grid: 10,
            n_obs: 20,
            locations: 0,
            predictors: 1,
            snr: 10.0,
            noise_var: 0.0,
            zero_truth: false,
            seed: 0,
        }
    }

    pub fn ioi() -> Self {
        Self {
            kind: DesignKind::Ioi,
            grid: 0,
            n_obs: 20,
            locations: 100,
            predictors: 10,
            snr: 10.0,
            noise_var: 0.0,
            zero_truth: false,
            seed: 0,
        }
    }

    pub fn soi() -> Self {
        Self {
            kind: DesignKind::Soi,
            grid: 20,
            n_obs: 100,
            locations: 0,
            predictors: 1,
            snr: 0.0,
            noise_var: 0.1,
            zero_truth: false,
            seed: 0,
        }
    }

    pub fn default_for(kind: DesignKind) -> Self {
        match kind {
            DesignKind::Ios => Self::ios(),
            DesignKind::Ioi => Self::ioi(),
            DesignKind::Soi => Self::soi(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PingError::Config(m));
        match self.kind {
            DesignKind::Ios | DesignKind::Soi if self.grid < 3 => bad(format!("grid side {} is too small", self.grid)),
            DesignKind::Ioi if self.locations < 2 || self.predictors == 0 => {
                bad("image-on-image needs locations and predictors".into())
            }
            DesignKind::Ios | DesignKind::Ioi if !(self.snr.is_finite() && self.snr > 0.0) => {
                bad(format!("snr must be positive, got {}", self.snr))
            }
            DesignKind::Soi if !(self.noise_var.is_finite() && self.noise_var > 0.0) => {
                bad(format!("noise variance must be positive, got {}", self.noise_var))
            }
            _ if self.n_obs < 2 => bad("need at least two observations".into()),
            _ => Ok(()),
        }
    }

    /// Error total variance for the image designs at this SNR.
    pub fn error_variance(&self) -> f64 {
        let table = match self.kind {
            DesignKind::Ioi => IOI_ERROR_VARIANCES,
            _ => IOS_ERROR_VARIANCES,
        };
        snr_to_variance(self.snr, &table)
    }
}

/// Piecewise-linear interpolation of the variance table over SNR 1, 5, 10.
///
/// Outside `[1, 10]` the variance scales as `1/SNR` from the nearest end.
pub fn snr_to_variance(snr: f64, table: &[f64; 3]) -> f64 {
    if snr <= SNR_LEVELS[0] {
        return table[0] * SNR_LEVELS[0] / snr;
    }
    if snr >= SNR_LEVELS[2] {
        return table[2] * SNR_LEVELS[2] / snr;
    }
    let i = if snr <= SNR_LEVELS[1] { 0 } else { 1 };
    let w = (snr - SNR_LEVELS[i]) / (SNR_LEVELS[i + 1] - SNR_LEVELS[i]);
    table[i] + w * (table[i + 1] - table[i])
}

/// Independent stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn threshold(k: f64) -> f64 {
    if k >= SIGNAL_THRESHOLD {
        k
    } else {
        0.0
    }
}

/// `2 Σ exp(-w ‖v - d‖² / 20)` at a point of the `{1..20}³` reference lattice.
pub fn ios_kappa(v: [f64; 3]) -> f64 {
    2.0 * IOS_BUMPS
        .iter()
        .map(|(d, w)| {
            let r2: f64 = v.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
            (-w * r2 / 20.0).exp()
        })
        .sum::<f64>()
}

/// True image-on-scalar slope on an `n³` lattice; index `i` maps to `(i + 1)·20/n`.
pub fn ios_truth(n: usize) -> Result<(GridSpec, Vec<f64>)> {
    let grid = GridSpec::cube(n, 3)?;
    let s = 20.0 / n as f64;
    let beta = (0..grid.len())
        .map(|i| {
            let c = grid.coords(i);
            threshold(ios_kappa([
                (c[0] + 1) as f64 * s,
                (c[1] + 1) as f64 * s,
                (c[2] + 1) as f64 * s,
            ]))
        })
        .collect();
    Ok((grid, beta))
}

/// `Σ 2 exp(-20 ‖v - d‖² / 50)` on the `{1..20}²` lattice.
pub fn soi_kappa(v: [f64; 2]) -> f64 {
    SOI_BUMPS
        .iter()
        .map(|d| {
            let r2 = (v[0] - d[0]).powi(2) + (v[1] - d[1]).powi(2);
            2.0 * (-20.0 * r2 / 50.0).exp()
        })
        .sum()
}

pub fn soi_truth(n: usize) -> Result<(GridSpec, Vec<f64>)> {
    let grid = GridSpec::cube(n, 2)?;
    let s = 20.0 / n as f64;
    let beta = (0..grid.len())
        .map(|i| {
            let c = grid.coords(i);
            threshold(soi_kappa([(c[0] + 1) as f64 * s, (c[1] + 1) as f64 * s]))
        })
        .collect();
    Ok((grid, beta))
}

/// `Σ 2 exp(-3 ‖v - u‖² / 50)` with centres `u` already on the `[0, 50]²` scale.
pub fn ioi_kappa(v: &[f64], centres: &[[f64; 2]]) -> f64 {
    centres
        .iter()
        .map(|u| {
            let r2 = (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2);
            2.0 * (-3.0 * r2 / 50.0).exp()
        })
        .sum()
}

/// Random-bump surface: 1 to 3 centres uniform on `[0, 50]²`.
pub fn ioi_bump_surface<R: Rng + ?Sized>(points: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
    let h = rng.random_range(1..=3);
    let centres: Vec<[f64; 2]> = (0..h)
        .map(|_| [50.0 * rng.random::<f64>(), 50.0 * rng.random::<f64>()])
        .collect();
    points.iter().map(|p| threshold(ioi_kappa(p, &centres))).collect()
}

fn lattice_field(grid: &GridSpec, theta: &MaternParams, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    Ok(CirculantOperator::from_matern_auto(grid, theta, MAX_EMBED_FACTOR)?.draw(rng))
}

/// Matérn `(ϑ², ζ², φ, ν)` with the range given on the 20-unit reference scale, rescaled to lattice units.
fn lattice_matern(total: f64, frac: f64, range: f64, smoothness: f64, n: usize) -> Result<MaternParams> {
    Ok(ReparamMaternParams::new(total, frac, range * n as f64 / 20.0, smoothness)?.dereparameterize())
}

/// A generated dataset with its true coefficient surfaces.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Ios { data: ImageOnScalarData, truth: Vec<f64> },
    Ioi { data: ImageOnImageData, truth: Vec<Vec<f64>> },
    Soi { data: ScalarOnImageData, truth: Vec<f64> },
}

impl Instance {
    pub fn problem(&self) -> Problem<'_> {
        match self {
            Instance::Ios { data, .. } => Problem::Ios(data),
            Instance::Ioi { data, .. } => Problem::Ioi(data),
            Instance::Soi { data, .. } => Problem::Soi(data),
        }
    }

    /// Locations that enter the metrics: the observed voxels of an image-on-scalar lattice.
    pub fn evaluation_mask(&self) -> Option<&[bool]> {
        match self {
            Instance::Ios { data, .. } => Some(&data.observed),
            _ => None,
        }
    }

    /// One vector per coefficient surface.
    pub fn truth(&self) -> Vec<Vec<f64>> {
        match self {
            Instance::Ios { truth, .. } | Instance::Soi { truth, .. } => vec![truth.clone()],
            Instance::Ioi { truth, .. } => truth.clone(),
        }
    }
}

/// Image-on-scalar replication `rep`: outer shell missing, times standardized.
pub fn generate_ios(design: &SimDesign, rep: u64) -> Result<Instance> {
    design.validate()?;
    let n = design.grid;
    let (grid, mut truth) = ios_truth(n)?;
    if design.zero_truth {
        truth.iter_mut().for_each(|b| *b = 0.0);
    }
    let mut rng = stream_rng(design.seed, rep + 1);
    let alpha = lattice_field(&grid, &lattice_matern(1.0, 0.95, 10.0, 1.0, n)?, &mut rng)?;
    let error = lattice_matern(design.error_variance(), 0.9, 10.0, 1.0, n)?;
    let op = CirculantOperator::from_matern_auto(&grid, &error, MAX_EMBED_FACTOR)?;
    let times = standardize_times(&(1..=design.n_obs).map(|t| t as f64).collect::<Vec<_>>())?;
    let images = times
        .iter()
        .map(|t| {
            let e = op.draw(&mut rng);
            (0..grid.len()).map(|v| alpha[v] + t * truth[v] + e[v]).collect()
        })
        .collect();
    let observed = grid.interior_mask(1);
    let data = ImageOnScalarData::new(grid, images, times, observed)?;
    Ok(Instance::Ios { data, truth })
}

/// Locations, predictors and truth shared by every image-on-image replication.
fn ioi_fixed(design: &SimDesign) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
    let mut rng = stream_rng(design.seed, 0);
    let points: Vec<Vec<f64>> = (0..design.locations)
        .map(|_| vec![50.0 * rng.random::<f64>(), 50.0 * rng.random::<f64>()])
        .collect();
    let gram = MaternGram::new(&points)?;
    let p = design.predictors;
    let mut chols = Vec::with_capacity(p);
    for _ in 0..p {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let theta = ReparamMaternParams::new(z[0].exp(), 1.0 / (1.0 + (-z[1]).exp()), z[2].exp(), z[3].exp())?;
        chols.push(crate::dense::cholesky(&gram.covariance(&theta.dereparameterize(), 0.0)?)?);
    }
    let predictors = (0..design.n_obs)
        .map(|_| {
            chols
                .iter()
                .map(|c| crate::dense::draw_from_covariance(c, &mut rng).iter().copied().collect())
                .collect()
        })
        .collect();
    let nulls = p / 2;
    let truth = (0..p)
        .map(|j| {
            if j < nulls || design.zero_truth {
                vec![0.0; points.len()]
            } else {
                ioi_bump_surface(&points, &mut rng)
            }
        })
        .collect();
    Ok((points, predictors, truth))
}

/// Image-on-image replication `rep` on random locations scaled to `[0, 50]²`.
pub fn generate_ioi(design: &SimDesign, rep: u64) -> Result<Instance> {
    design.validate()?;
    let (points, predictors, truth) = ioi_fixed(design)?;
    let gram = MaternGram::new(&points)?;
    let mut rng = stream_rng(design.seed, rep + 1);
    let draw = |theta: ReparamMaternParams, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let c = crate::dense::cholesky(&gram.covariance(&theta.dereparameterize(), 0.0)?)?;
        Ok(crate::dense::draw_from_covariance(&c, rng).iter().copied().collect())
    };
    let alpha = draw(ReparamMaternParams::new(1.0, 0.95, 10.0, 1.0)?, &mut rng)?;
    let error = ReparamMaternParams::new(design.error_variance(), 0.9, 10.0, 1.0)?;
    let images = (0..design.n_obs)
        .map(|i| {
            let e = draw(error, &mut rng)?;
            Ok((0..points.len())
                .map(|v| {
                    alpha[v]
                        + truth
                            .iter()
                            .enumerate()
                            .map(|(j, b)| predictors[i][j][v] * b[v])
                            .sum::<f64>()
                        + e[v]
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let data = ImageOnImageData::new(Support::Scattered { points }, images, predictors)?;
    Ok(Instance::Ioi { data, truth })
}

/// Circulant embedding of the exponential kernel, padding until it is nonnegative definite.
fn exponential_operator(grid: &GridSpec, range: f64) -> Result<CirculantOperator> {
    let cov = |lag: &[f64]| {
        let h = lag.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(powered_exponential(h, range, 1.0))
    };
    let mut last = None;
    for f in 2..=MAX_EMBED_FACTOR {
        match CirculantOperator::from_lag_covariance(grid, Embedding::Padded(f), cov) {
            Ok(op) => return Ok(op),
            Err(e @ PingError::Covariance { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| PingError::Parameter("no embedding tried".into())))
}

/// Scalar-on-image replication `rep`: exponential-covariance images with range 3.
pub fn generate_soi(design: &SimDesign, rep: u64) -> Result<Instance> {
    design.validate()?;
    let (grid, mut truth) = soi_truth(design.grid)?;
    if design.zero_truth {
        truth.iter_mut().for_each(|b| *b = 0.0);
    }
    if design.n_obs >= grid.len() {
        log::warn!("{} observations for {} coefficients", design.n_obs, grid.len());
    }
    let mut rng = stream_rng(design.seed, rep + 1);
    let op = exponential_operator(&grid, 3.0)?;
    let sd = design.noise_var.sqrt();
    let mut images = Vec::with_capacity(design.n_obs);
    let mut responses = Vec::with_capacity(design.n_obs);
    for _ in 0..design.n_obs {
        let x = op.draw(&mut rng);
        let mean: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
        responses.push(mean + sd * rng.sample::<f64, _>(StandardNormal));
        images.push(x);
    }
    let data = ScalarOnImageData::new(grid, responses, images)?;
    Ok(Instance::Soi { data, truth })
}

pub fn generate(design: &SimDesign, rep: u64) -> Result<Instance> {
    match design.kind {
        DesignKind::Ios => generate_ios(design, rep),
        DesignKind::Ioi => generate_ioi(design, rep),
        DesignKind::Soi => generate_soi(design, rep),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonzero_fraction_is_frozen() {
        // exhaustive count over every lattice point, computed independently
        let (_, b) = ios_truth(20).unwrap();
        assert_eq!(b.iter().filter(|&&x| x != 0.0).count(), 2050);
        let (_, b) = ios_truth(10).unwrap();
        assert_eq!(b.iter().filter(|&&x| x != 0.0).count(), 240);
        let (_, b) = soi_truth(20).unwrap();
        assert_eq!(b.iter().filter(|&&x| x != 0.0).count(), 105);
    }

    #[test]
    fn bump_centres_and_far_field() {
        let (grid, b) = ios_truth(20).unwrap();
        let (c, _) = IOS_BUMPS[0];
        let at = grid.index(&[c[0] as usize - 1, c[1] as usize - 1, c[2] as usize - 1]);
        assert!(ios_kappa(c) >= 2.0 && b[at] > 0.0);
        assert_eq!(b[grid.index(&[19, 0, 19])], 0.0);
        assert!(soi_kappa([10.0, 10.0]) >= 2.0);
    }

    #[test]
    fn single_corner_bump_and_threshold() {
        let pts = [vec![0.0, 0.0], vec![50.0, 50.0]];
        let k = ioi_kappa(&pts[0], &[[0.0, 0.0]]);
        assert!((k - 2.0).abs() < 1e-15);
        assert!(ioi_kappa(&pts[1], &[[0.0, 0.0]]) < 1e-10);
        assert_eq!(threshold(0.05), 0.0);
        assert_eq!(threshold(0.1), 0.1);
    }

    #[test]
    fn snr_interpolation() {
        assert_eq!(snr_to_variance(1.0, &IOS_ERROR_VARIANCES), 0.09);
        assert_eq!(snr_to_variance(5.0, &IOS_ERROR_VARIANCES), 0.017);
        assert_eq!(snr_to_variance(10.0, &IOS_ERROR_VARIANCES), 0.009);
        let mid = snr_to_variance(7.5, &IOS_ERROR_VARIANCES);
        assert!((mid - 0.013).abs() < 1e-12);
    }

    #[test]
    fn generators_are_pure() {
        let mut d = SimDesign::ios();
        d.grid = 6;
        d.n_obs = 4;
        d.seed = 3;
        assert_eq!(generate(&d, 1).unwrap(), generate(&d, 1).unwrap());
        assert_ne!(generate(&d, 1).unwrap(), generate(&d, 2).unwrap());
        let Instance::Ios { data, .. } = generate(&d, 0).unwrap() else { unreachable!() };
        assert_eq!(data.observed.iter().filter(|&&o| o).count(), 64);
        let s: f64 = data.times.iter().sum();
        let s2: f64 = data.times.iter().map(|t| t * t).sum();
        assert!(s.abs() < 1e-10 && (s2 - 4.0).abs() < 1e-10);

        let mut d = SimDesign::ioi();
        d.locations = 15;
        d.n_obs = 3;
        let a = generate(&d, 0).unwrap();
        let b = generate(&d, 1).unwrap();
        let (Instance::Ioi { data: da, truth: ta }, Instance::Ioi { data: db, truth: tb }) = (&a, &b) else {
            unreachable!()
        };
        assert_eq!(da.predictors, db.predictors);
        assert_eq!(ta, tb);
        assert!(ta[..5].iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert_ne!(da.images, db.images);
    }

    #[test]
    fn scalar_design_dimensions() {
        let d = SimDesign::soi();
        let Instance::Soi { data, truth } = generate(&d, 0).unwrap() else { unreachable!() };
        assert!(data.responses.len() < data.grid.len());
        assert_eq!(truth.len(), 400);
        let mut z = d.clone();
        z.zero_truth = true;
        assert!(generate(&z, 0).unwrap().truth()[0].iter().all(|&b| b == 0.0));
    }
}
