//! Estimation and selection metrics against the known truth.

use serde::{Deserialize, Serialize};

use crate::error::{PingError, Result};
use crate::samplers::SurfaceSummary;

/// Metrics of one replication, pooled over every coefficient surface.
///
/// Rates over an empty set (no true zeros, or no true signal) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepMetrics {
    pub mse: Option<f64>,
    pub mse_zero: Option<f64>,
    pub tp: Option<f64>,
    pub fp: Option<f64>,
    pub coverage: Option<f64>,
}

/// Metric names in table order.
pub const METRICS: [&str; 5] = ["mse", "mse_zero", "tp", "fp", "coverage"];

impl RepMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mse" => self.mse,
            "mse_zero" => self.mse_zero,
            "tp" => self.tp,
            "fp" => self.fp,
            "coverage" => self.coverage,
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) -> Result<()> {
        let slot = match name {
            "mse" => &mut self.mse,
            "mse_zero" => &mut self.mse_zero,
            "tp" => &mut self.tp,
            "fp" => &mut self.fp,
            "coverage" => &mut self.coverage,
            other => return Err(PingError::Config(format!("unknown metric {other:?}"))),
        };
        *slot = value;
        Ok(())
    }
}

fn excludes_zero(lo: f64, hi: f64) -> bool {
    lo > 0.0 || hi < 0.0
}

fn ratio(num: f64, den: usize) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

/// Compare posterior summaries with the true surfaces at the locations where `mask` holds.
pub fn evaluate(summaries: &[SurfaceSummary], truth: &[Vec<f64>], mask: Option<&[bool]>) -> Result<RepMetrics> {
    if summaries.len() != truth.len() {
        return Err(PingError::Dimension(format!(
            "{} summaries for {} true surfaces",
            summaries.len(),
            truth.len()
        )));
    }
    let (mut se, mut se_zero, mut hits, mut false_hits, mut covered) = (0.0, 0.0, 0usize, 0usize, 0usize);
    let (mut n, mut n_zero) = (0usize, 0usize);
    for (s, t) in summaries.iter().zip(truth) {
        if s.mean.len() != t.len() || s.lower.len() != t.len() || s.upper.len() != t.len() {
            return Err(PingError::Dimension(format!(
                "summary over {} locations, truth over {}",
                s.mean.len(),
                t.len()
            )));
        }
        if mask.is_some_and(|m| m.len() != t.len()) {
            return Err(PingError::Dimension("mask length differs from the truth".into()));
        }
        for v in (0..t.len()).filter(|&v| mask.is_none_or(|m| m[v])) {
            let err = (s.mean[v] - t[v]).powi(2);
            let signal = excludes_zero(s.lower[v], s.upper[v]);
            se += err;
            n += 1;
            if t[v] == 0.0 {
                se_zero += err;
                n_zero += 1;
                false_hits += signal as usize;
            } else {
                hits += signal as usize;
            }
            covered += (s.lower[v] <= t[v] && t[v] <= s.upper[v]) as usize;
        }
    }
    Ok(RepMetrics {
        mse: ratio(se, n),
        mse_zero: ratio(se_zero, n_zero),
        tp: ratio(hits as f64, n - n_zero),
        fp: ratio(false_hits as f64, n_zero),
        coverage: ratio(covered as f64, n),
    })
}

/// Mean and standard error of one metric across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample SD over `√reps`; zero with one replication.
    pub se: f64,
}

/// Order-independent mean and standard error of the defined values.
pub fn summarize(values: &[Option<f64>]) -> Option<Estimate> {
    let mut xs: Vec<f64> = values.iter().flatten().copied().collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    let se = if xs.len() > 1 {
        (dev.iter().sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some(Estimate { mean, se })
}

/// Replication metrics for one prior, with their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub prior: String,
    pub replications: Vec<RepMetrics>,
}

impl MetricsReport {
    pub fn new(prior: impl Into<String>, replications: Vec<RepMetrics>) -> Self {
        Self {
            prior: prior.into(),
            replications,
        }
    }

    pub fn values(&self, metric: &str) -> Vec<Option<f64>> {
        self.replications.iter().map(|r| r.get(metric)).collect()
    }

    pub fn estimate(&self, metric: &str) -> Option<Estimate> {
        summarize(&self.values(metric))
    }
}

/// Column label for a prior with `q` components.
pub fn prior_label(q: usize) -> String {
    if q == 1 {
        "GP".to_string()
    } else {
        format!("PING-{q}")
    }
}
