//! The optimisation loop for every method.
//!
//! `mcvi` and `qmcvi` update on every iteration. The `yoasovi-*` methods draw
//! once per iteration and update only when the accept/reject test passes; the
//! run stops after `patience` consecutive rejections or at `max_iters`.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acceptance::{self, PatienceCounter, RuleKind, TemperatureSchedule};
use crate::estimators::{self, rng_for, Model};
use crate::family::{self, VariationalParams};
use crate::par::Execution;
use crate::sequences::{SequenceKind, SequenceSource};
use crate::{Error, Result};

/// Accepted estimates averaged into the ending ELBO.
pub const ENDING_ELBO_WINDOW: usize = 10;

/// Fresh posterior draws used for DIC.
pub const DIC_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mcvi,
    Qmcvi,
    YoasoviNaive,
    YoasoviMetropolis,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Mcvi,
        Method::Qmcvi,
        Method::YoasoviNaive,
        Method::YoasoviMetropolis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mcvi => "mcvi",
            Method::Qmcvi => "qmcvi",
            Method::YoasoviNaive => "yoasovi-naive",
            Method::YoasoviMetropolis => "yoasovi-metropolis",
        }
    }

    pub fn rule(self) -> Option<RuleKind> {
        match self {
            Method::YoasoviNaive => Some(RuleKind::Naive),
            Method::YoasoviMetropolis => Some(RuleKind::Metropolis),
            _ => None,
        }
    }

    pub fn default_samples(self) -> usize {
        match self {
            Method::Mcvi => 100,
            Method::Qmcvi => 10,
            _ => 1,
        }
    }

    pub fn sequence_kind(self) -> SequenceKind {
        match self {
            Method::Qmcvi => SequenceKind::SobolScrambled,
            _ => SequenceKind::PseudoRandom,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the `elapsed_s` column measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Monotonic wall-clock seconds around the loop body.
    #[default]
    Wall,
    /// Cumulative model-density evaluations; reproducible across runs.
    Evaluations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub samples: usize,
    pub learning_rate: f64,
    pub max_iters: u64,
    pub patience: u64,
    pub schedule: TemperatureSchedule,
    pub seed: u64,
    pub clock: ClockMode,
    pub exec: Execution,
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        RunConfig {
            method,
            samples: method.default_samples(),
            learning_rate: 0.001,
            max_iters: 500,
            patience: 10,
            schedule: TemperatureSchedule::default(),
            seed: 0,
            clock: ClockMode::Wall,
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.samples == 0 {
            return bad("samples must be >= 1".into());
        }
        if self.method.rule().is_some() && self.samples != 1 {
            return bad(format!("{} draws exactly one sample per iteration", self.method));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub t: u64,
    pub elapsed_s: f64,
    pub elbo: f64,
    pub accepted: bool,
    /// Temperature `M(t)`; `None` for methods without acceptance sampling.
    pub m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub wall_seconds: f64,
    pub final_elbo: Option<f64>,
    pub dic: Option<f64>,
    pub converged: bool,
    pub density_evals: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    pub summary: RunSummary,
    pub lambda: VariationalParams,
}

impl RunTrace {
    pub fn succeeded(&self) -> bool {
        self.summary.error.is_none()
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one optimisation. Configuration errors are returned; numeric failures
/// end the run early and are recorded in the summary with the partial trace.
pub fn run<M: Model + ?Sized>(config: &RunConfig, model: &M) -> Result<RunTrace> {
    config.validate()?;
    let d = model.dim();
    let lambda0 = VariationalParams::init(model, &mut rng_for(config.seed, 1));
    let mut state = LoopState {
        lambda: lambda0,
        records: Vec::new(),
        evals: 0,
        converged: false,
    };
    let outcome = match config.method.rule() {
        None => run_every_step(config, model, d, &mut state),
        Some(rule) => run_acceptance(config, model, d, rule, &mut state),
    };
    let LoopState {
        lambda,
        records,
        evals,
        converged,
    } = state;

    let final_elbo = final_elbo(&records).ok();
    let mut error = outcome.err().map(|e| e.to_string());
    let dic = if error.is_none() {
        let draws = posterior_draw_set(&lambda, DIC_DRAWS, mix(config.seed, 0xD1C))?;
        match model.dic(&draws) {
            Some(Ok(v)) => Some(v),
            Some(Err(e)) => {
                error = Some(format!("dic: {e}"));
                None
            }
            None => None,
        }
    } else {
        None
    };
    Ok(RunTrace {
        summary: RunSummary {
            iterations: records.len() as u64,
            wall_seconds: records.last().map_or(0.0, |r| r.elapsed_s),
            final_elbo,
            dic,
            converged,
            density_evals: evals,
            error,
        },
        records,
        lambda,
    })
}

struct LoopState {
    lambda: VariationalParams,
    records: Vec<IterRecord>,
    evals: u64,
    converged: bool,
}

fn elapsed(clock: ClockMode, start: Instant, evals: u64) -> f64 {
    match clock {
        ClockMode::Wall => start.elapsed().as_secs_f64(),
        ClockMode::Evaluations => evals as f64,
    }
}

fn run_every_step<M: Model + ?Sized>(config: &RunConfig, model: &M, d: usize, st: &mut LoopState) -> Result<()> {
    let kind = config.method.sequence_kind();
    let mut src = SequenceSource::new(kind, d, mix(config.seed, 2))?;
    let start = Instant::now();
    for t in 1..=config.max_iters {
        if kind.is_low_discrepancy() {
            // A fresh randomisation of the point set each iteration.
            src = SequenceSource::new(kind, d, mix(config.seed, 2 + t))?;
        }
        let gs = estimators::estimate(&st.lambda, model, &mut src, config.samples, config.exec)?;
        st.evals += gs.draws_used as u64;
        st.lambda = estimators::update_step(&st.lambda, &gs.grad, config.learning_rate)?;
        st.records.push(IterRecord {
            t,
            elapsed_s: elapsed(config.clock, start, st.evals),
            elbo: gs.elbo,
            accepted: true,
            m: None,
        });
    }
    Ok(())
}

fn run_acceptance<M: Model + ?Sized>(
    config: &RunConfig,
    model: &M,
    d: usize,
    rule: RuleKind,
    st: &mut LoopState,
) -> Result<()> {
    let mut src = SequenceSource::new(SequenceKind::PseudoRandom, d, mix(config.seed, 2))?;
    let mut coin = rng_for(config.seed, 3);
    let mut counter = PatienceCounter::new(config.patience);
    let mut l_prev = f64::NEG_INFINITY;
    let start = Instant::now();
    for t in 1..=config.max_iters {
        let gs = estimators::estimate(&st.lambda, model, &mut src, 1, config.exec)?;
        st.evals += 1;
        let m = acceptance::temperature(&config.schedule, t)?;
        let u: f64 = coin.random();
        let decision = acceptance::decide(rule, m, gs.elbo, l_prev, u)?;
        if decision.accepted() {
            st.lambda = estimators::update_step(&st.lambda, &gs.grad, config.learning_rate)?;
            l_prev = gs.elbo;
        }
        let stop = counter.tick(decision);
        st.records.push(IterRecord {
            t,
            elapsed_s: elapsed(config.clock, start, st.evals),
            elbo: gs.elbo,
            accepted: decision.accepted(),
            m: Some(m),
        });
        if stop {
            st.converged = true;
            break;
        }
    }
    Ok(())
}

/// Mean of the last [`ENDING_ELBO_WINDOW`] accepted ELBO estimates.
pub fn final_elbo(records: &[IterRecord]) -> Result<f64> {
    let tail: Vec<f64> = records
        .iter()
        .rev()
        .filter(|r| r.accepted)
        .take(ENDING_ELBO_WINDOW)
        .map(|r| r.elbo)
        .collect();
    if tail.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// `n` unconstrained draws from `q(·|λ)`.
pub fn posterior_draw_set(lambda: &VariationalParams, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut src = SequenceSource::new(SequenceKind::PseudoRandom, lambda.dim(), seed)?;
    (0..n).map(|_| family::sample_z(lambda, &src.next_point())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{ConjugateNormalModel, CountingModel};

    fn conj() -> ConjugateNormalModel {
        ConjugateNormalModel::new(1.0, 1.0, &[0.8, 1.3, 0.2, 1.9, 1.1, 0.4, 1.6, 0.9])
    }

    fn rec(t: u64, elbo: f64, accepted: bool) -> IterRecord {
        IterRecord {
            t,
            elapsed_s: 0.0,
            elbo,
            accepted,
            m: None,
        }
    }

    #[test]
    fn ending_elbo_examples() {
        assert_eq!(final_elbo(&[rec(1, -4.0, true)]).unwrap(), -4.0);
        let constant: Vec<_> = (1..30).map(|t| rec(t, -7.5, true)).collect();
        assert_eq!(final_elbo(&constant).unwrap(), -7.5);
        // Accepted values 1..=12, with rejected noise interleaved; tail is 3..=12.
        let mut v = Vec::new();
        for i in 1..=12 {
            v.push(rec(2 * i - 1, i as f64, true));
            v.push(rec(2 * i, -1000.0, false));
        }
        assert_eq!(final_elbo(&v).unwrap(), 7.5);
        assert!(matches!(final_elbo(&[]), Err(Error::EmptyTrace)));
    }

    #[test]
    fn every_step_methods_record_each_iteration() {
        let model = conj();
        for method in [Method::Mcvi, Method::Qmcvi] {
            let cfg = RunConfig {
                max_iters: 500,
                ..RunConfig::new(method)
            };
            let tr = run(&cfg, &model).unwrap();
            assert_eq!(tr.records.len(), 500);
            assert!(tr.records.iter().all(|r| r.accepted && r.m.is_none()));
            assert!(tr
                .records
                .windows(2)
                .all(|w| w[1].t == w[0].t + 1 && w[1].elapsed_s >= w[0].elapsed_s));
            assert!(!tr.summary.converged);
            assert_eq!(tr.summary.density_evals, 500 * cfg.samples as u64);
        }
    }

    #[test]
    fn per_iteration_evaluations() {
        let inner = conj();
        let model = CountingModel::new(&inner);
        for (method, s) in [(Method::Mcvi, 100), (Method::Qmcvi, 10), (Method::YoasoviNaive, 1)] {
            model.reset();
            let cfg = RunConfig {
                max_iters: 40,
                ..RunConfig::new(method)
            };
            let tr = run(&cfg, &model).unwrap();
            assert_eq!(model.count(), tr.records.len() as u64 * s);
        }
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let model = conj();
        for method in Method::ALL {
            let cfg = RunConfig {
                seed: 17,
                max_iters: 100,
                clock: ClockMode::Evaluations,
                ..RunConfig::new(method)
            };
            assert_eq!(run(&cfg, &model).unwrap(), run(&cfg, &model).unwrap());
        }
    }

    #[test]
    fn strict_temperature_stops_on_patience() {
        let model = conj();
        let cfg = RunConfig {
            schedule: TemperatureSchedule::constant(1e12),
            patience: 7,
            max_iters: 100_000,
            ..RunConfig::new(Method::YoasoviNaive)
        };
        let tr = run(&cfg, &model).unwrap();
        assert!(tr.summary.converged);
        let n = tr.records.len();
        assert!(n < 100_000);
        assert!(tr.records[n - 7..].iter().all(|r| !r.accepted));
        assert!(tr.records[n - 8].accepted);
    }

    #[test]
    fn rejected_iterations_leave_lambda_untouched() {
        // Replays the loop by hand and compares λ after every rejection.
        let model = conj();
        let cfg = RunConfig {
            seed: 5,
            max_iters: 300,
            schedule: TemperatureSchedule::constant(5.0),
            ..RunConfig::new(Method::YoasoviMetropolis)
        };
        let full = run(&cfg, &model).unwrap();
        let mut prev = None;
        for t in 1..=full.records.len() as u64 {
            let partial = run(
                &RunConfig {
                    max_iters: t,
                    ..cfg.clone()
                },
                &model,
            )
            .unwrap();
            let rec = partial.records.last().unwrap();
            if let Some(before) = &prev {
                if !rec.accepted {
                    assert_eq!(&partial.lambda, before);
                } else {
                    assert_ne!(&partial.lambda, before);
                }
            }
            prev = Some(partial.lambda);
        }
    }

    #[test]
    fn numeric_failure_keeps_partial_trace() {
        // A huge step size throws the variational mean out of range.
        let model = conj();
        let cfg = RunConfig {
            learning_rate: 1e200,
            max_iters: 50,
            ..RunConfig::new(Method::Mcvi)
        };
        let tr = run(&cfg, &model).unwrap();
        assert!(tr.summary.error.is_some());
        assert!(tr.records.len() < 50);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::new(Method::YoasoviNaive);
        cfg.samples = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new(Method::Mcvi);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        assert!("qmcvi".parse::<Method>().unwrap() == Method::Qmcvi);
        assert!("bbvi".parse::<Method>().is_err());
    }
}
