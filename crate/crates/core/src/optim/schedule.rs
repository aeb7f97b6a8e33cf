use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    OneCycle,
    /// Cosine annealing with warm restarts.
    Cawr,
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onecycle" => Ok(ScheduleKind::OneCycle),
            "cawr" => Ok(ScheduleKind::Cawr),
            _ => Err(Error::Config(format!("unknown schedule '{s}' (expected onecycle or cawr)"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::OneCycle => "onecycle",
            ScheduleKind::Cawr => "cawr",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub total_steps: u64,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// First restart period in steps.
    pub t0: u64,
    pub t_mult: u64,
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::OneCycle,
            total_steps: 1,
            max_lr: 1e-3,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            t0: 1,
            t_mult: 2,
            min_lr: 0.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pct_start > 0.0
            && self.pct_start < 1.0
            && self.div_factor > 1.0
            && self.final_div_factor > 1.0
            && self.t0 >= 1
            && self.t_mult >= 1
            && self.max_lr > 0.0
            && self.min_lr >= 0.0
            && self.min_lr <= self.max_lr;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }

    pub fn lr(&self, step: u64) -> Result<f64> {
        match self.kind {
            ScheduleKind::OneCycle => onecycle_lr(step, self),
            ScheduleKind::Cawr => Ok(cawr_lr(step, self)),
        }
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * (1.0 + (PI * frac).cos()) / 2.0
}

/// Cosine warm-up from `max_lr / div_factor` to `max_lr` over the first
/// `pct_start` of the run, then cosine decay to `max_lr / final_div_factor`.
pub fn onecycle_lr(step: u64, cfg: &ScheduleConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(arg_err!("step {step} beyond schedule length {}", cfg.total_steps));
    }
    let t = cfg.total_steps as f64;
    let peak = cfg.pct_start * t;
    let s = step as f64;
    let initial = cfg.max_lr / cfg.div_factor;
    let last = cfg.max_lr / cfg.final_div_factor;
    Ok(if s <= peak {
        cosine(initial, cfg.max_lr, if peak > 0.0 { s / peak } else { 1.0 })
    } else {
        cosine(cfg.max_lr, last, (s - peak) / (t - peak))
    })
}

/// Restarts after `t0`, `t0 * t_mult`, ... steps.
pub fn cawr_lr(step: u64, cfg: &ScheduleConfig) -> f64 {
    let mut s = step;
    let mut period = cfg.t0.max(1);
    while s >= period {
        s -= period;
        period = period.saturating_mul(cfg.t_mult.max(1));
    }
    cosine(cfg.max_lr, cfg.min_lr, s as f64 / period as f64)
}
