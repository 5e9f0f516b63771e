//! Accept/reject rules for single-draw updates, temperature schedules, and
//! the patience counter used for early stopping.
//!
//! Both rules compare a candidate ELBO `L_new` with the last accepted value
//! `L_prev` through the scaled gap `g = M·(L_new - L_prev)/|L_prev|`:
//!
//! - naive: `min(1, 1 + g)`, clipped below at zero
//! - metropolis: `min(1, exp(g))`
//!
//! Any candidate at least as good as `L_prev` is accepted with probability
//! one, and the first iteration (`L_prev = -∞`) always accepts.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Naive,
    Metropolis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Log,
    Linear,
}

/// `M(t)`: constant `k`, `k·ln t`, or `k·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub kind: ScheduleKind,
    pub k: f64,
}

impl TemperatureSchedule {
    pub fn new(kind: ScheduleKind, k: f64) -> Result<Self> {
        let s = TemperatureSchedule { kind, k };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(k: f64) -> Self {
        TemperatureSchedule {
            kind: ScheduleKind::Constant,
            k,
        }
    }

    pub fn log(k: f64) -> Self {
        TemperatureSchedule {
            kind: ScheduleKind::Log,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > 0.0 && self.k.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "schedule coefficient k",
                value: self.k,
            })
        }
    }

    pub fn temperature(&self, t: u64) -> Result<f64> {
        temperature(self, t)
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::log(1.0)
    }
}

pub fn temperature(schedule: &TemperatureSchedule, t: u64) -> Result<f64> {
    if t < 1 {
        return Err(Error::Domain {
            what: "iteration index",
            value: t as f64,
        });
    }
    Ok(match schedule.kind {
        ScheduleKind::Constant => schedule.k,
        ScheduleKind::Log => schedule.k * (t as f64).ln(),
        ScheduleKind::Linear => schedule.k * t as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRule {
    pub kind: RuleKind,
    pub schedule: TemperatureSchedule,
}

impl AcceptanceRule {
    pub fn probability_at(&self, t: u64, l_new: f64, l_prev: f64) -> Result<f64> {
        accept_probability(self.kind, temperature(&self.schedule, t)?, l_new, l_prev)
    }
}

/// Probability of accepting a candidate with ELBO `l_new` against `l_prev`.
pub fn accept_probability(kind: RuleKind, m: f64, l_new: f64, l_prev: f64) -> Result<f64> {
    if l_prev == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    if l_prev == 0.0 {
        return Err(Error::DegenerateReference);
    }
    if !l_prev.is_finite() {
        return Err(Error::NonFinite { what: "reference ELBO" });
    }
    if l_new.is_nan() {
        return Err(Error::NonFinite { what: "candidate ELBO" });
    }
    if l_new >= l_prev {
        return Ok(1.0);
    }
    let gap = m * (l_new - l_prev) / l_prev.abs();
    let p = match kind {
        RuleKind::Naive => 1.0 + gap,
        RuleKind::Metropolis => gap.exp(),
    };
    // m = 0 with an infinite gap gives NaN: no penalty applies.
    Ok(if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn accepted(self) -> bool {
        self == Decision::Accept
    }
}

/// Accepts iff `u ≤ accept_probability(..)`.
pub fn decide(kind: RuleKind, m: f64, l_new: f64, l_prev: f64, u: f64) -> Result<Decision> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain {
            what: "acceptance uniform",
            value: u,
        });
    }
    Ok(if u <= accept_probability(kind, m, l_new, l_prev)? {
        Decision::Accept
    } else {
        Decision::Reject
    })
}

/// Consecutive-rejection counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatienceCounter {
    pub nu: u64,
    pub patience: u64,
}

impl PatienceCounter {
    pub fn new(patience: u64) -> Self {
        PatienceCounter { nu: 0, patience }
    }

    /// Applies a decision; returns `true` when the run should stop.
    pub fn tick(&mut self, decision: Decision) -> bool {
        match decision {
            Decision::Accept => self.nu = 0,
            Decision::Reject => self.nu += 1,
        }
        self.exhausted()
    }

    pub fn exhausted(&self) -> bool {
        self.nu >= self.patience
    }
}
