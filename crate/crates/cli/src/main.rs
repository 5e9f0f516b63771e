use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use yoasovi::acceptance::{ScheduleKind, TemperatureSchedule};
use yoasovi::driver::Method;
use yoasovi::harness::{self, DatasetConfig, ExperimentConfig, ExperimentMatrix, MethodConfig};

#[derive(Parser)]
#[command(
    name = "yoasovi",
    version,
    about = "Variational inference for Gaussian mixtures with accept/reject updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix (datasets × methods × replicates).
    Run(RunArgs),
    /// Extract ELBO-vs-time rows from one or more trace files.
    Trajectory(TrajectoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Temper {
    Constant,
    Log,
    Linear,
}

impl From<Temper> for ScheduleKind {
    fn from(t: Temper) -> Self {
        match t {
            Temper::Constant => ScheduleKind::Constant,
            Temper::Log => ScheduleKind::Log,
            Temper::Linear => ScheduleKind::Linear,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment file; every flag below overrides it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this method instead of the configured list.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    samples: Option<usize>,
    /// Temperature schedule for the accept/reject methods.
    #[arg(long, value_enum)]
    temper: Option<Temper>,
    /// Temperature scale.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    patience: Option<u64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV data file (use with --components).
    #[arg(long, conflicts_with = "preset")]
    data: Option<PathBuf>,
    /// Mixture components to fit to --data, or to override a preset's.
    #[arg(long)]
    components: Option<usize>,
    /// Column of --data holding class labels, dropped before fitting.
    #[arg(long, requires = "data")]
    label_column: Option<String>,
    /// Simulated dataset: sim-p2k2, sim-p2k3 or sim-p3k4.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads for running replicates.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrajectoryArgs {
    /// Trace CSV; repeat to write a labelled comparison.
    #[arg(long, required = true)]
    trace: Vec<PathBuf>,
    /// Keep rows with elapsed_s at most this many seconds.
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: yoasovi::Error| e.to_string())
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) -> Result<()> {
    let ex = &mut cfg.experiment;
    if let Some(r) = a.replicates {
        ex.replicates = r;
    }
    if let Some(s) = a.seed {
        ex.base_seed = s;
    }
    if let Some(j) = a.jobs {
        ex.jobs = j;
    }
    if let Some(o) = &a.out {
        ex.out = o.clone();
    }

    if let Some(path) = &a.data {
        let Some(k) = a.components else {
            bail!("--data needs --components");
        };
        cfg.datasets = vec![DatasetConfig {
            label_column: a.label_column.clone(),
            ..DatasetConfig::csv(path, k)
        }];
    } else if let Some(name) = &a.preset {
        harness::preset(name)?;
        cfg.datasets = vec![DatasetConfig {
            k: a.components,
            ..DatasetConfig::preset(name)
        }];
    } else if let Some(k) = a.components {
        for d in &mut cfg.datasets {
            d.k = Some(k);
        }
    }

    if let Some(m) = a.method {
        cfg.methods = vec![MethodConfig::new(m)];
    } else if cfg.methods.is_empty() && has_method_overrides(a) {
        cfg.methods = [Method::Mcvi, Method::Qmcvi, Method::YoasoviNaive]
            .into_iter()
            .map(MethodConfig::new)
            .collect();
    }
    for m in &mut cfg.methods {
        if a.samples.is_some() {
            m.samples = a.samples;
        }
        if a.patience.is_some() {
            m.patience = a.patience;
        }
        if a.max_iters.is_some() {
            m.max_iters = a.max_iters;
        }
        if a.lr.is_some() {
            m.learning_rate = a.lr;
        }
        if a.temper.is_some() || a.k.is_some() {
            let base = m.schedule.unwrap_or_default();
            m.schedule = Some(TemperatureSchedule {
                kind: a.temper.map_or(base.kind, Into::into),
                k: a.k.unwrap_or(base.k),
            });
        }
    }
    Ok(())
}

fn has_method_overrides(a: &RunArgs) -> bool {
    a.samples.is_some()
        || a.patience.is_some()
        || a.max_iters.is_some()
        || a.lr.is_some()
        || a.temper.is_some()
        || a.k.is_some()
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, &a)?;
    let matrix = ExperimentMatrix::from_config(&cfg)?;
    let out = cfg.experiment.out.clone();
    let outcome = harness::run_matrix(&matrix, &out)?;

    print!("{}", harness::render_table(&outcome.summary));
    println!("\nwrote {}", out.join("summary.csv").display());
    for r in outcome.runs.iter().filter(|r| !r.ok()) {
        eprintln!(
            "run {} / {} / r{} failed: {}",
            r.dataset,
            r.method,
            r.replicate,
            r.error.as_deref().unwrap_or("")
        );
    }
    if outcome.any_cell_failed() {
        eprintln!("every replicate of at least one (dataset, method) cell failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn trajectory(a: TrajectoryArgs) -> Result<ExitCode> {
    if !(a.horizon >= 0.0) {
        bail!("--horizon must be non-negative");
    }
    let series = a
        .trace
        .iter()
        .map(|p| {
            let recs = harness::read_trace(p).with_context(|| format!("reading trace {}", p.display()))?;
            Ok((label(p), recs))
        })
        .collect::<Result<Vec<_>>>()?;
    harness::write_trajectory(&a.out, &series, a.horizon)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Trajectory(a) => trajectory(a),
    }
}
