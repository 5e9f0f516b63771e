//! Diagonal-covariance Gaussian mixture model.
//!
//! Priors: weights ~ Dirichlet(α), each mean coordinate ~ N(0, mean_scale²),
//! each log standard deviation ~ N(0, logsd_scale²).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::estimators::Model;
use crate::family;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    /// Number of clusters.
    pub k: usize,
    /// Data dimension.
    pub p: usize,
    #[serde(default = "default_mean_scale")]
    pub prior_mean_scale: f64,
    #[serde(default = "default_one")]
    pub prior_dirichlet_alpha: f64,
    #[serde(default = "default_one")]
    pub prior_logsd_scale: f64,
}

fn default_mean_scale() -> f64 {
    10.0
}

fn default_one() -> f64 {
    1.0
}

impl GmmSpec {
    pub fn new(k: usize, p: usize) -> Self {
        GmmSpec {
            k,
            p,
            prior_mean_scale: default_mean_scale(),
            prior_dirichlet_alpha: 1.0,
            prior_logsd_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 {
            return Err(Error::Config(format!(
                "k and p must be >= 1 (k={}, p={})",
                self.k, self.p
            )));
        }
        for (name, v) in [
            ("prior_mean_scale", self.prior_mean_scale),
            ("prior_dirichlet_alpha", self.prior_dirichlet_alpha),
            ("prior_logsd_scale", self.prior_logsd_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Length of the unconstrained parameter vector, `K(2p+1) - 1`.
    pub fn unconstrained_dim(&self) -> usize {
        self.k * (2 * self.p + 1) - 1
    }
}

/// Mixture parameters in constrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sds: Vec<Vec<f64>>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self, spec: &GmmSpec) -> Result<()> {
        let shape = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Shape { what, expected, got })
            }
        };
        shape("mixture weights", spec.k, self.weights.len())?;
        shape("component means", spec.k, self.means.len())?;
        shape("component sds", spec.k, self.sds.len())?;
        for (m, s) in self.means.iter().zip(&self.sds) {
            shape("mean vector", spec.p, m.len())?;
            shape("sd vector", spec.p, s.len())?;
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain {
                what: "mixture weights on the simplex",
                value: total,
            });
        }
        if let Some(&bad) = self.sds.iter().flatten().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain {
                what: "component standard deviation",
                value: bad,
            });
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite { what: "component mean" });
        }
        Ok(())
    }
}

/// An `n × p` table of finite observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    values: Vec<f64>,
    n: usize,
    p: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Shape {
                what: "dataset rows",
                expected: 1,
                got: 0,
            });
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::Shape {
                what: "dataset columns",
                expected: 1,
                got: 0,
            });
        }
        let mut values = Vec::with_capacity(n * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::Shape {
                    what: "dataset row",
                    expected: p,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what: "dataset entry" });
            }
            values.extend(row);
        }
        Ok(Dataset {
            name: name.into(),
            values,
            n,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.p)
    }
}

fn check_dims(spec: &GmmSpec, data: &Dataset) -> Result<()> {
    if data.p() != spec.p {
        return Err(Error::Shape {
            what: "data dimension",
            expected: spec.p,
            got: data.p(),
        });
    }
    Ok(())
}

/// `Σₙ log Σₖ wₖ N(yₙ | μₖ, diag(σₖ²))`, evaluated with log-sum-exp.
pub fn log_likelihood(spec: &GmmSpec, data: &Dataset, params: &GmmParams) -> Result<f64> {
    check_dims(spec, data)?;
    let k = params.k();
    let p = spec.p;
    // Per-component constants: log w - Σ log σ - p/2 log 2π.
    let offsets: Vec<f64> = (0..k)
        .map(|c| params.weights[c].ln() - params.sds[c].iter().map(|s| s.ln()).sum::<f64>() - 0.5 * p as f64 * LN_2PI)
        .collect();
    let inv_sds: Vec<Vec<f64>> = params.sds.iter().map(|s| s.iter().map(|x| 1.0 / x).collect()).collect();
    let mut terms = vec![0.0; k];
    let mut total = 0.0;
    for y in data.rows() {
        for c in 0..k {
            let mu = &params.means[c];
            let inv = &inv_sds[c];
            let mut quad = 0.0;
            for j in 0..p {
                let d = (y[j] - mu[j]) * inv[j];
                quad += d * d;
            }
            terms[c] = offsets[c] - 0.5 * quad;
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

pub fn log_prior(spec: &GmmSpec, params: &GmmParams) -> f64 {
    let k = params.k() as f64;
    let alpha = spec.prior_dirichlet_alpha;
    let mut lp = ln_gamma(k * alpha) - k * ln_gamma(alpha);
    if alpha != 1.0 {
        lp += (alpha - 1.0) * params.weights.iter().map(|w| w.ln()).sum::<f64>();
    }
    let ms = spec.prior_mean_scale;
    for m in params.means.iter().flatten() {
        lp += -0.5 * LN_2PI - ms.ln() - 0.5 * (m / ms).powi(2);
    }
    // log σ ~ N(0, s²) expressed as a density on σ, hence the -ln σ term.
    let ls = spec.prior_logsd_scale;
    for s in params.sds.iter().flatten() {
        let l = s.ln();
        lp += -0.5 * LN_2PI - ls.ln() - 0.5 * (l / ls).powi(2) - l;
    }
    lp
}

/// Log joint density `log p(y, θ)`.
pub fn log_joint(spec: &GmmSpec, data: &Dataset, params: &GmmParams) -> Result<f64> {
    params.validate(spec)?;
    let v = log_likelihood(spec, data, params)? + log_prior(spec, params);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what: "log joint" })
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws `n` observations from the mixture.
pub fn simulate(spec: &GmmSpec, truth: &GmmParams, n: usize, seed: u64, name: impl Into<String>) -> Result<Dataset> {
    spec.validate()?;
    truth.validate(spec)?;
    if n == 0 {
        return Err(Error::Shape {
            what: "simulated sample size",
            expected: 1,
            got: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&truth.weights).map_err(|e| Error::Config(e.to_string()))?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = (0..n)
        .map(|_| {
            let c = pick.sample(&mut rng);
            (0..spec.p)
                .map(|j| truth.means[c][j] + truth.sds[c][j] * std.sample(&mut rng))
                .collect()
        })
        .collect();
    Dataset::new(name, rows)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Column to drop, by header name or zero-based index.
    pub label_column: Option<String>,
    /// `None` detects a header: the first row is a header when any of its
    /// cells is not a number.
    pub has_header: Option<bool>,
}

/// Reads a numeric table. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records().peekable();
    let first = match records.peek() {
        None => {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
        Some(Err(_)) => return Err(records.next().unwrap().unwrap_err().into()),
        Some(Ok(r)) => r.clone(),
    };
    let header = opts
        .has_header
        .unwrap_or_else(|| first.iter().any(|c| c.parse::<f64>().is_err()));
    let width = first.len();
    let drop = match &opts.label_column {
        None => None,
        Some(label) => {
            let by_name = if header {
                first.iter().position(|c| c == label)
            } else {
                None
            };
            match by_name.or_else(|| label.parse::<usize>().ok()) {
                Some(i) if i < width => Some(i),
                _ => return Err(Error::Config(format!("label column {label:?} not found"))),
            }
        }
    };
    if header {
        records.next();
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                row: line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(width);
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == drop {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, rows)
}

/// Deviance `-2 log p(y | θ)`.
pub fn deviance(spec: &GmmSpec, data: &Dataset, params: &GmmParams) -> Result<f64> {
    Ok(-2.0 * log_likelihood(spec, data, params)?)
}

/// Deviance information criterion `D̄ + p_D`, with `p_D = D̄ - D(θ̄)`.
pub fn dic(spec: &GmmSpec, data: &Dataset, draws: &[GmmParams]) -> Result<f64> {
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws {
            needed: 2,
            got: draws.len(),
        });
    }
    let s = draws.len() as f64;
    let mut mean_dev = 0.0;
    for d in draws {
        d.validate(spec)?;
        mean_dev += deviance(spec, data, d)?;
    }
    mean_dev /= s;

    let (k, p) = (spec.k, spec.p);
    let mut avg = GmmParams {
        weights: vec![0.0; k],
        means: vec![vec![0.0; p]; k],
        sds: vec![vec![0.0; p]; k],
    };
    for d in draws {
        for c in 0..k {
            avg.weights[c] += d.weights[c] / s;
            for j in 0..p {
                avg.means[c][j] += d.means[c][j] / s;
                avg.sds[c][j] += d.sds[c][j] / s;
            }
        }
    }
    let total: f64 = avg.weights.iter().sum();
    avg.weights.iter_mut().for_each(|w| *w /= total);
    let dev_at_mean = deviance(spec, data, &avg)?;
    let value = 2.0 * mean_dev - dev_at_mean;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what: "DIC" })
    }
}

/// The mixture model bound to a dataset, in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub spec: GmmSpec,
    pub data: Dataset,
}

impl GmmModel {
    pub fn new(spec: GmmSpec, data: Dataset) -> Result<Self> {
        spec.validate()?;
        check_dims(&spec, &data)?;
        Ok(GmmModel { spec, data })
    }
}

impl Model for GmmModel {
    fn dim(&self) -> usize {
        self.spec.unconstrained_dim()
    }

    fn log_density(&self, z: &[f64]) -> Result<f64> {
        let (theta, log_det) = family::constrain(&self.spec, z)?;
        let v = log_likelihood(&self.spec, &self.data, &theta)? + log_prior(&self.spec, &theta) + log_det;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "log joint" })
        }
    }

    /// Logits and log-sds near zero; component means at distinct random rows.
    fn initial_location(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let init = Normal::new(0.0, 0.1).expect("valid sd");
        let mut m: Vec<f64> = (0..self.dim()).map(|_| init.sample(rng)).collect();
        let (k, p) = (self.spec.k, self.spec.p);
        let picks = rand::seq::index::sample(rng, self.data.n(), k.min(self.data.n()));
        for (c, row) in picks.iter().enumerate() {
            let at = family::mean_offset(&self.spec, c);
            m[at..at + p].copy_from_slice(self.data.row(row));
        }
        m
    }

    fn dic(&self, draws: &[Vec<f64>]) -> Option<Result<f64>> {
        let params: Result<Vec<GmmParams>> = draws
            .iter()
            .map(|z| family::constrain(&self.spec, z).map(|(t, _)| t))
            .collect();
        Some(params.and_then(|ps| dic(&self.spec, &self.data, &ps)))
    }
}
