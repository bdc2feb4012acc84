//! Simulation studies: data generators, metrics, and result files.

mod design;
mod metrics;
mod table;

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{PingError, Result};
use crate::exec::{map_range, Execution};
use crate::samplers::{run_chain, ChainConfig, ChainOutput};

pub use design::*;
pub use metrics::{evaluate, prior_label, summarize, Estimate, MetricsReport, RepMetrics, METRICS};
pub use table::{emit_replications, emit_slice, parse_replications, ResultTable};

/// A design crossed with priors and replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub design: SimDesign,
    /// Components per prior; `1` is the Gaussian process.
    pub priors: Vec<usize>,
    pub reps: usize,
    pub chain: ChainConfig,
}

/// One finished chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub prior: String,
    pub rep: usize,
    pub seed: u64,
    pub metrics: RepMetrics,
    pub acceptance: std::collections::BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub reports: Vec<MetricsReport>,
    pub chains: Vec<ChainRecord>,
    /// Posterior summaries of replication 0, per prior.
    pub first_outputs: Vec<ChainOutput>,
    pub truth: Vec<Vec<Vec<f64>>>,
}

impl ExperimentResult {
    pub fn table(&self) -> ResultTable {
        ResultTable::from_reports(&self.reports)
    }

    /// Replications in which `metric` under `a` is strictly below `b`.
    pub fn wins(&self, metric: &str, a: &str, b: &str) -> usize {
        let find = |p: &str| self.reports.iter().find(|r| r.prior == p);
        match (find(a), find(b)) {
            (Some(ra), Some(rb)) => ra
                .values(metric)
                .iter()
                .zip(rb.values(metric))
                .filter(|(x, y)| matches!((x, y), (Some(x), Some(y)) if x < y))
                .count(),
            _ => 0,
        }
    }
}

/// Chain seed for `(experiment seed, q, rep)`.
pub fn chain_seed(seed: u64, q: usize, rep: usize) -> u64 {
    stream_rng(seed, (1 << 40) | ((q as u64) << 20) | rep as u64).next_u64()
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.chain.validate()?;
        if self.priors.is_empty() || self.priors.contains(&0) {
            return Err(PingError::Config("priors must be a non-empty list of positive q".into()));
        }
        if self.reps == 0 {
            return Err(PingError::Config("reps must be positive".into()));
        }
        Ok(())
    }

    /// Run every `(prior, rep)` chain and collect metrics in a fixed order.
    pub fn run(&self, exec: Execution) -> Result<ExperimentResult> {
        self.validate()?;
        let instances = map_range(exec, self.reps, |r| generate(&self.design, r as u64))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize)> = self
            .priors
            .iter()
            .flat_map(|&q| (0..self.reps).map(move |r| (q, r)))
            .collect();
        let outputs = map_range(exec, jobs.len(), |j| {
            let (q, rep) = jobs[j];
            let label = prior_label(q);
            let mut cfg = self.chain.clone();
            cfg.q = q;
            cfg.seed = chain_seed(self.chain.seed, q, rep);
            if let Some(dir) = &self.chain.checkpoint_dir {
                let sub = dir.join(format!("{label}-rep{rep}"));
                std::fs::create_dir_all(&sub)?;
                cfg.checkpoint_dir = Some(sub);
            }
            let start = std::time::Instant::now();
            let instance = &instances[rep];
            let out = run_chain(instance.problem(), &cfg)?;
            let metrics = evaluate(&out.summaries, &instance.truth(), instance.evaluation_mask())?;
            log::info!("{label} rep {rep}: {metrics:?}");
            let record = ChainRecord {
                prior: label,
                rep,
                seed: cfg.seed,
                metrics,
                acceptance: out.acceptance.clone(),
                seconds: start.elapsed().as_secs_f64(),
            };
            Ok::<_, PingError>((record, out))
        });
        let mut chains = Vec::with_capacity(jobs.len());
        let mut first_outputs = Vec::new();
        for res in outputs {
            let (record, out) = res?;
            if record.rep == 0 {
                first_outputs.push(out);
            }
            chains.push(record);
        }
        let reports = self
            .priors
            .iter()
            .map(|&q| {
                let label = prior_label(q);
                let reps = chains.iter().filter(|c| c.prior == label).map(|c| c.metrics).collect();
                MetricsReport::new(label, reps)
            })
            .collect();
        Ok(ExperimentResult {
            reports,
            chains,
            first_outputs,
            truth: instances.iter().map(|i| i.truth()).collect(),
        })
    }
}

/// Two-dimensional plot coordinates of the locations shown for a surface.
fn slice_locations(design: &SimDesign, instance_points: Option<&[Vec<f64>]>) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    match design.kind {
        DesignKind::Ios => {
            let grid = crate::grid::GridSpec::cube(design.grid, 3)?;
            let z = design.grid / 2;
            let idx: Vec<usize> = (0..grid.len()).filter(|&i| grid.coords(i)[2] == z).collect();
            let coords = idx
                .iter()
                .map(|&i| {
                    let c = grid.coords(i);
                    vec![c[0] as f64, c[1] as f64]
                })
                .collect();
            Ok((idx, coords))
        }
        DesignKind::Soi => {
            let grid = crate::grid::GridSpec::cube(design.grid, 2)?;
            let coords = (0..grid.len())
                .map(|i| {
                    let c = grid.coords(i);
                    vec![c[0] as f64, c[1] as f64]
                })
                .collect();
            Ok(((0..grid.len()).collect(), coords))
        }
        DesignKind::Ioi => {
            let pts = instance_points.unwrap_or_default();
            Ok(((0..pts.len()).collect(), pts.to_vec()))
        }
    }
}

/// Write `table.csv`, `replications.csv`, `meta.json` and `slices/*.csv` under `out`.
pub fn write_outputs(experiment: &Experiment, result: &ExperimentResult, out: &Path, meta_extra: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(out.join("slices"))?;
    result.table().emit(std::fs::File::create(out.join("table.csv"))?)?;
    emit_replications(&result.reports, std::fs::File::create(out.join("replications.csv"))?)?;
    let points = match generate(&experiment.design, 0)? {
        Instance::Ioi { data, .. } => match data.support {
            crate::models::Support::Scattered { points } => Some(points),
            _ => None,
        },
        _ => None,
    };
    let (idx, coords) = slice_locations(&experiment.design, points.as_deref())?;
    let truth = &result.truth[0];
    for (report, output) in result.reports.iter().zip(&result.first_outputs) {
        for (s, summary) in output.summaries.iter().enumerate() {
            let t: Vec<f64> = idx.iter().map(|&i| truth[s][i]).collect();
            let e: Vec<f64> = idx.iter().map(|&i| summary.mean[i]).collect();
            let name = format!("{}_beta{}.csv", report.prior, s + 1);
            emit_slice(&coords, &t, &e, std::fs::File::create(out.join("slices").join(name))?)?;
        }
    }
    let meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": experiment,
        "chains": result.chains,
        "extra": meta_extra,
    });
    std::fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
