//! Experiment matrices: configuration, replicate execution, trace files and
//! summaries.
//!
//! Output layout under the output directory:
//!
//! ```text
//! traces/<dataset>__<method>__r<replicate>.csv   iter,elapsed_s,elbo,accepted,M
//! runs.csv                                       one line per run
//! summary.csv                                    one line per (dataset, method)
//! ```
//!
//! Replicate `r` runs with seed `base_seed + r` for every dataset and method.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acceptance::TemperatureSchedule;
use crate::driver::{self, ClockMode, IterRecord, Method, RunConfig, RunTrace};
use crate::model::{self, CsvOptions, GmmModel, GmmParams, GmmSpec};
use crate::par::{self, Execution};
use crate::{Error, Result};

pub const PRESETS: [&str; 3] = ["sim-p2k2", "sim-p2k3", "sim-p3k4"];

pub const TRACE_HEADER: [&str; 5] = ["iter", "elapsed_s", "elbo", "accepted", "M"];

/// Default sample size for simulated presets.
pub const PRESET_N: usize = 500;

/// True mixture parameters of a named simulation preset.
pub fn preset(name: &str) -> Result<GmmParams> {
    let unit = |k: usize, p: usize| vec![vec![1.0; p]; k];
    let theta = match name {
        "sim-p2k2" => GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![-2.0, -2.0], vec![2.0, 2.0]],
            sds: unit(2, 2),
        },
        "sim-p2k3" => GmmParams {
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            means: vec![vec![-3.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]],
            sds: unit(3, 2),
        },
        "sim-p3k4" => GmmParams {
            weights: vec![0.25; 4],
            means: vec![
                vec![-2.0, -2.0, -2.0],
                vec![2.0, 2.0, -2.0],
                vec![2.0, -2.0, 2.0],
                vec![-2.0, 2.0, 2.0],
            ],
            sds: unit(4, 3),
        },
        other => return Err(Error::Config(format!("unknown preset {other:?} (known: {PRESETS:?})"))),
    };
    Ok(theta)
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSettings,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub replicates: usize,
    pub base_seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub clock: ClockMode,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            replicates: 1,
            base_seed: 0,
            jobs: 1,
            out: PathBuf::from("results"),
            clock: ClockMode::Wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    pub prior_mean_scale: f64,
    pub prior_dirichlet_alpha: f64,
    pub prior_logsd_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        let s = GmmSpec::new(1, 1);
        Priors {
            prior_mean_scale: s.prior_mean_scale,
            prior_dirichlet_alpha: s.prior_dirichlet_alpha,
            prior_logsd_scale: s.prior_logsd_scale,
        }
    }
}

/// A simulated preset or a CSV file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Number of mixture components to fit; presets default to their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Simulated sample size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Simulation seed (independent of replicate seeds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_header: Option<bool>,
    /// Overrides a preset's true parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GmmParams>,
}

impl DatasetConfig {
    pub fn preset(name: &str) -> Self {
        DatasetConfig {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn csv(path: impl Into<PathBuf>, k: usize) -> Self {
        DatasetConfig {
            csv: Some(path.into()),
            k: Some(k),
            ..Default::default()
        }
    }

    fn resolve(&self, priors: &Priors) -> Result<(String, GmmModel)> {
        let with_priors = |k, p| GmmSpec {
            prior_mean_scale: priors.prior_mean_scale,
            prior_dirichlet_alpha: priors.prior_dirichlet_alpha,
            prior_logsd_scale: priors.prior_logsd_scale,
            ..GmmSpec::new(k, p)
        };
        match (&self.preset, &self.csv) {
            (Some(name), None) => {
                let truth = match &self.truth {
                    Some(t) => t.clone(),
                    None => preset(name)?,
                };
                let p = truth.means.first().map_or(0, Vec::len);
                let id = self.id.clone().unwrap_or_else(|| name.clone());
                let data = model::simulate(
                    &with_priors(truth.k(), p),
                    &truth,
                    self.n.unwrap_or(PRESET_N),
                    self.seed.unwrap_or(1),
                    id.clone(),
                )?;
                let spec = with_priors(self.k.unwrap_or(truth.k()), p);
                Ok((id, GmmModel::new(spec, data)?))
            }
            (None, Some(path)) => {
                let k = self
                    .k
                    .ok_or_else(|| Error::Config(format!("dataset {} needs k", path.display())))?;
                let opts = CsvOptions {
                    label_column: self.label_column.clone(),
                    has_header: self.has_header,
                };
                let data = model::load_csv(path, &opts)?;
                let id = self.id.clone().unwrap_or_else(|| data.name.clone());
                let spec = with_priors(k, data.p());
                Ok((id, GmmModel::new(spec, data)?))
            }
            _ => Err(Error::Config(
                "each dataset needs exactly one of `preset` or `csv`".into(),
            )),
        }
    }
}

/// A method template; unset fields take the method's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, alias = "lr", skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<TemperatureSchedule>,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            id: None,
            method,
            samples: None,
            learning_rate: None,
            max_iters: None,
            patience: None,
            schedule: None,
        }
    }

    pub fn to_run_config(&self) -> RunConfig {
        let d = RunConfig::new(self.method);
        RunConfig {
            samples: self.samples.unwrap_or(d.samples),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            patience: self.patience.unwrap_or(d.patience),
            schedule: self.schedule.unwrap_or(d.schedule),
            ..d
        }
    }

    pub fn label(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.method.name().to_string())
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

// ---------------------------------------------------------------- matrix

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub id: String,
    pub model: GmmModel,
}

#[derive(Debug, Clone)]
pub struct MethodEntry {
    pub id: String,
    pub config: RunConfig,
}

/// A resolved experiment: every dataset loaded, every method validated.
#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub datasets: Vec<DatasetEntry>,
    pub methods: Vec<MethodEntry>,
    pub replicates: usize,
    pub base_seed: u64,
    pub jobs: usize,
    pub clock: ClockMode,
}

impl ExperimentMatrix {
    /// Empty dataset or method lists fall back to `sim-p2k2` and
    /// MCVI / QMCVI / naive YOASOVI.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let s = &cfg.experiment;
        if s.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        let dataset_cfgs = if cfg.datasets.is_empty() {
            vec![DatasetConfig::preset("sim-p2k2")]
        } else {
            cfg.datasets.clone()
        };
        let method_cfgs = if cfg.methods.is_empty() {
            [Method::Mcvi, Method::Qmcvi, Method::YoasoviNaive]
                .into_iter()
                .map(MethodConfig::new)
                .collect()
        } else {
            cfg.methods.clone()
        };
        let datasets = dataset_cfgs
            .iter()
            .map(|d| d.resolve(&cfg.priors).map(|(id, model)| DatasetEntry { id, model }))
            .collect::<Result<Vec<_>>>()?;
        let methods = method_cfgs
            .iter()
            .map(|m| {
                let config = RunConfig {
                    clock: s.clock,
                    ..m.to_run_config()
                };
                config.validate()?;
                Ok(MethodEntry { id: m.label(), config })
            })
            .collect::<Result<Vec<_>>>()?;
        for ids in [
            datasets.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(),
            methods.iter().map(|m| m.id.as_str()).collect(),
        ] {
            for (i, a) in ids.iter().enumerate() {
                if ids[..i].contains(a) {
                    return Err(Error::Config(format!("duplicate id {a:?}; set `id` explicitly")));
                }
                if a.is_empty() || a.contains(['/', '\\']) {
                    return Err(Error::Config(format!("invalid id {a:?}")));
                }
            }
        }
        Ok(ExperimentMatrix {
            datasets,
            methods,
            replicates: s.replicates,
            base_seed: s.base_seed,
            jobs: s.jobs.max(1),
            clock: s.clock,
        })
    }

    pub fn seed_for(&self, replicate: usize) -> u64 {
        self.base_seed.wrapping_add(replicate as u64)
    }
}

/// One finished run, as listed in `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub iterations: u64,
    pub seconds: f64,
    pub elbo: Option<f64>,
    pub dic: Option<f64>,
    pub converged: bool,
    pub density_evals: u64,
    pub error: Option<String>,
    pub trace_file: PathBuf,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    /// Mean and sample standard deviation (zero for a single value, NaN for none).
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stat { mean, sd }
    }
}

/// Per (dataset, method) statistics over the successful replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub iterations: Stat,
    pub seconds: Stat,
    pub elbo: Stat,
    pub dic: Stat,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub out_dir: PathBuf,
}

impl MatrixOutcome {
    /// True when some (dataset, method) cell has no successful run.
    pub fn any_cell_failed(&self) -> bool {
        self.summary.iter().any(|r| r.failed == r.runs)
    }
}

pub fn trace_file_name(dataset: &str, method: &str, replicate: usize) -> String {
    format!("{dataset}__{method}__r{replicate:03}.csv")
}

/// Runs every (dataset × method × replicate) cell and writes all outputs.
pub fn run_matrix(matrix: &ExperimentMatrix, out_dir: impl AsRef<Path>) -> Result<MatrixOutcome> {
    let out_dir = out_dir.as_ref().to_path_buf();
    let trace_dir = out_dir.join("traces");
    fs::create_dir_all(&trace_dir)?;

    let mut jobs = Vec::new();
    for (di, _) in matrix.datasets.iter().enumerate() {
        for (mi, _) in matrix.methods.iter().enumerate() {
            for r in 0..matrix.replicates {
                jobs.push((di, mi, r));
            }
        }
    }
    let exec = if matrix.jobs > 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = par::with_jobs(matrix.jobs, || {
        par::map(exec, &jobs, |&(di, mi, r)| -> Result<RunRecord> {
            let ds = &matrix.datasets[di];
            let me = &matrix.methods[mi];
            let seed = matrix.seed_for(r);
            let config = RunConfig {
                seed,
                ..me.config.clone()
            };
            let trace = driver::run(&config, &ds.model)?;
            let path = trace_dir.join(trace_file_name(&ds.id, &me.id, r));
            write_trace(&path, &trace.records)?;
            Ok(record_for(&ds.id, &me.id, r, seed, &trace, path))
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let summary = summarize(matrix, &runs);
    write_runs(out_dir.join("runs.csv"), &runs)?;
    write_summary(out_dir.join("summary.csv"), &summary)?;
    Ok(MatrixOutcome { runs, summary, out_dir })
}

fn record_for(dataset: &str, method: &str, replicate: usize, seed: u64, trace: &RunTrace, path: PathBuf) -> RunRecord {
    let s = &trace.summary;
    RunRecord {
        dataset: dataset.to_string(),
        method: method.to_string(),
        replicate,
        seed,
        iterations: s.iterations,
        seconds: s.wall_seconds,
        elbo: s.final_elbo,
        dic: s.dic,
        converged: s.converged,
        density_evals: s.density_evals,
        error: s.error.clone(),
        trace_file: path,
    }
}

pub fn summarize(matrix: &ExperimentMatrix, runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for ds in &matrix.datasets {
        for me in &matrix.methods {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.dataset == ds.id && r.method == me.id)
                .collect();
            let ok: Vec<&&RunRecord> = cell.iter().filter(|r| r.ok()).collect();
            let col = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            rows.push(SummaryRow {
                dataset: ds.id.clone(),
                method: me.id.clone(),
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                iterations: Stat::of(&col(&|r| Some(r.iterations as f64))),
                seconds: Stat::of(&col(&|r| Some(r.seconds))),
                elbo: Stat::of(&col(&|r| r.elbo)),
                dic: Stat::of(&col(&|r| r.dic)),
                converged_fraction: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|r| r.converged).count() as f64 / ok.len() as f64
                },
            });
        }
    }
    rows
}

// ---------------------------------------------------------------- files

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace(path: impl AsRef<Path>, records: &[IterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.elapsed_s.to_string(),
            r.elbo.to_string(),
            if r.accepted { "1" } else { "0" }.to_string(),
            opt(r.m),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<IterRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    if rd.headers()?.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: format!("trace header must be {}", TRACE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or_else(|| Error::Parse {
                row,
                column: j + 1,
                message: "missing field".into(),
            })
        };
        let num = |j: usize| -> Result<f64> {
            field(j)?.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: "not a number".into(),
            })
        };
        let m = field(4)?;
        out.push(IterRecord {
            t: num(0)? as u64,
            elapsed_s: num(1)?,
            elbo: num(2)?,
            accepted: field(3)? == "1",
            m: if m.is_empty() { None } else { Some(num(4)?) },
        });
    }
    Ok(out)
}

pub const RUNS_HEADER: [&str; 11] = [
    "dataset",
    "method",
    "replicate",
    "seed",
    "iterations",
    "seconds",
    "elbo",
    "dic",
    "converged",
    "density_evals",
    "status",
];

fn write_runs(path: PathBuf, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUNS_HEADER)?;
    for r in runs {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.seconds.to_string(),
            opt(r.elbo),
            opt(r.dic),
            r.converged.to_string(),
            r.density_evals.to_string(),
            r.error
                .as_ref()
                .map_or_else(|| "ok".to_string(), |e| format!("error: {e}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "dataset",
    "method",
    "runs",
    "failed",
    "iterations_mean",
    "iterations_sd",
    "seconds_mean",
    "seconds_sd",
    "elbo_mean",
    "elbo_sd",
    "dic_mean",
    "dic_sd",
    "converged_fraction",
];

fn write_summary(path: PathBuf, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut fields = vec![
            r.dataset.clone(),
            r.method.clone(),
            r.runs.to_string(),
            r.failed.to_string(),
        ];
        for s in [r.iterations, r.seconds, r.elbo, r.dic] {
            fields.push(s.mean.to_string());
            fields.push(s.sd.to_string());
        }
        fields.push(r.converged_fraction.to_string());
        w.write_record(fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table of the summary, in the layout of a results table.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let header = [
        "dataset", "method", "ok/runs", "iter", "(sd)", "secs", "(sd)", "ELBO", "(sd)", "DIC", "(sd)", "conv",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let f = |x: f64, d: usize| {
                if x.is_nan() {
                    "-".to_string()
                } else {
                    format!("{x:.d$}")
                }
            };
            vec![
                r.dataset.clone(),
                r.method.clone(),
                format!("{}/{}", r.runs - r.failed, r.runs),
                f(r.iterations.mean, 1),
                f(r.iterations.sd, 1),
                f(r.seconds.mean, 3),
                f(r.seconds.sd, 3),
                f(r.elbo.mean, 1),
                f(r.elbo.sd, 1),
                f(r.dic.mean, 1),
                f(r.dic.sd, 1),
                f(r.converged_fraction, 2),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            cells
                .iter()
                .map(|c| c[j].len())
                .chain([header[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (j, c) in row.iter().enumerate() {
            if j < 2 {
                let _ = write!(out, "{c:<w$}  ", w = widths[j]);
            } else {
                let _ = write!(out, "{c:>w$}  ", w = widths[j]);
            }
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for c in &cells {
        line(&mut out, c);
    }
    out
}

/// `(elapsed_s, elbo)` rows with `elapsed_s <= horizon`.
pub fn trajectory(records: &[IterRecord], horizon: f64) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.elapsed_s <= horizon)
        .map(|r| (r.elapsed_s, r.elbo))
        .collect()
}

/// Writes one series as `elapsed_s,elbo`, or several as `series,elapsed_s,elbo`.
pub fn write_trajectory(path: impl AsRef<Path>, series: &[(String, Vec<IterRecord>)], horizon: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let labelled = series.len() > 1;
    if labelled {
        w.write_record(["series", "elapsed_s", "elbo"])?;
    } else {
        w.write_record(["elapsed_s", "elbo"])?;
    }
    for (label, records) in series {
        for (t, e) in trajectory(records, horizon) {
            if labelled {
                w.write_record([label.clone(), t.to_string(), e.to_string()])?;
            } else {
                w.write_record([t.to_string(), e.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
