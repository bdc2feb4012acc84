use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use ping_core::experiments::{write_outputs, DesignKind, Experiment, SimDesign};
use ping_core::samplers::{ChainConfig, ComponentUpdate, ProposalKind};
use ping_core::{Execution, PingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Design {
    Ios,
    Ioi,
    Soi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Proposal {
    Printed,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Update {
    Exact,
    Guided,
}

/// Simulation studies for regression with product-of-Gaussian-process priors.
#[derive(Debug, Parser)]
#[command(name = "ping", version)]
struct Cli {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    design: Option<Design>,
    /// Components per prior, comma separated; 1 is the Gaussian process.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<usize>>,
    /// Signal-to-noise level for image responses.
    #[arg(long)]
    snr: Option<f64>,
    /// Scalar-on-image noise variance.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Post-burn-in iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Lattice side length.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    impute_every: Option<usize>,
    #[arg(long, value_enum)]
    proposal: Option<Proposal>,
    /// Image-on-scalar component update.
    #[arg(long, value_enum)]
    update: Option<Update>,
    /// Replace the true coefficients by zero.
    #[arg(long)]
    zero_truth: bool,
    /// Write a resumable checkpoint every this many iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Run replications one after another.
    #[arg(long)]
    sequential: bool,
}

/// Everything a run needs; the JSON config file has the same fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    design: Design,
    q: Vec<usize>,
    snr: Option<f64>,
    sigma: Option<f64>,
    reps: usize,
    iters: usize,
    burnin: usize,
    seed: u64,
    grid: Option<usize>,
    out: PathBuf,
    impute_every: usize,
    proposal: Proposal,
    update: Update,
    zero_truth: bool,
    checkpoint_every: Option<usize>,
    sequential: bool,
    pcg_max_iter: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            design: Design::Ios,
            q: vec![1, 3],
            snr: None,
            sigma: None,
            reps: 5,
            iters: 2000,
            burnin: 2000,
            seed: 0,
            grid: None,
            out: PathBuf::from("ping-out"),
            impute_every: 30,
            proposal: Proposal::Weighted,
            update: Update::Exact,
            zero_truth: false,
            checkpoint_every: None,
            sequential: false,
            pcg_max_iter: None,
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self, PingError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PingError::Config(format!("{}: {e}", path.display())))
    }

    fn apply(&mut self, cli: &Cli) {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &cli.$f { self.$f = v.clone(); })*};
        }
        take!(design, q, reps, iters, burnin, seed, out, impute_every, proposal, update);
        if cli.snr.is_some() {
            self.snr = cli.snr;
        }
        if cli.sigma.is_some() {
            self.sigma = cli.sigma;
        }
        if cli.grid.is_some() {
            self.grid = cli.grid;
        }
        if cli.checkpoint_every.is_some() {
            self.checkpoint_every = cli.checkpoint_every;
        }
        self.zero_truth |= cli.zero_truth;
        self.sequential |= cli.sequential;
    }

    fn experiment(&self) -> Result<Experiment, PingError> {
        let kind = match self.design {
            Design::Ios => DesignKind::Ios,
            Design::Ioi => DesignKind::Ioi,
            Design::Soi => DesignKind::Soi,
        };
        let mut design = SimDesign::default_for(kind);
        design.seed = self.seed;
        design.zero_truth = self.zero_truth;
        match (kind, self.snr, self.sigma) {
            (DesignKind::Soi, Some(_), _) => return Err(PingError::Config("--snr does not apply to soi".into())),
            (DesignKind::Ios | DesignKind::Ioi, _, Some(_)) => {
                return Err(PingError::Config("--sigma only applies to soi".into()))
            }
            (DesignKind::Soi, None, Some(s)) => design.noise_var = s,
            (_, Some(s), None) => design.snr = s,
            _ => {}
        }
        if let Some(g) = self.grid {
            if kind == DesignKind::Ioi {
                return Err(PingError::Config("--grid does not apply to ioi".into()));
            }
            design.grid = g;
        }
        let mut chain = ChainConfig {
            iterations: self.iters,
            burnin: self.burnin,
            seed: self.seed,
            impute_every: self.impute_every,
            proposal: match self.proposal {
                Proposal::Printed => ProposalKind::Printed,
                Proposal::Weighted => ProposalKind::Weighted,
            },
            update: match self.update {
                Update::Exact => ComponentUpdate::Exact,
                Update::Guided => ComponentUpdate::Guided,
            },
            checkpoint_dir: Some(self.out.join("checkpoints")),
            checkpoint_every: self.checkpoint_every,
            ..ChainConfig::default()
        };
        chain.pcg.max_iter = self.pcg_max_iter;
        let experiment = Experiment {
            design,
            priors: self.q.clone(),
            reps: self.reps,
            chain,
        };
        experiment.validate()?;
        Ok(experiment)
    }
}

fn run(cli: &Cli) -> Result<PathBuf, PingError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.apply(cli);
    let experiment = config.experiment()?;
    let exec = if config.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    log::info!("running {} × {:?} × {} replications", experiment.design.kind, experiment.priors, experiment.reps);
    let start = Instant::now();
    let result = experiment.run(exec)?;
    let extra = serde_json::json!({
        "config": config,
        "seconds": start.elapsed().as_secs_f64(),
        "execution": exec,
    });
    write_outputs(&experiment, &result, &config.out, extra)?;
    let mut table = Vec::new();
    result.table().emit(&mut table)?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(config.out)
}

fn exit_code(err: &PingError) -> u8 {
    match err {
        PingError::Config(_) | PingError::Parameter(_) | PingError::Json(_) => 2,
        PingError::ChainFailed { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            eprintln!("results written to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            if let PingError::ChainFailed {
                checkpoint: Some(path), ..
            } = &err
            {
                eprintln!("checkpoint: {}", path.display());
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
