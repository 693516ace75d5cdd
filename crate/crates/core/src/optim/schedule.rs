//! Learning-rate schedules and the linear batch-size scaling rule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Multistep,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Multistep => "multistep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(ScheduleKind::Cosine),
            "multistep" => Some(ScheduleKind::Multistep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub total_iters: u64,
    pub eta_min: f64,
    pub warmup_iters: u64,
}

impl ScheduleConfig {
    pub fn cosine(total_iters: u64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Cosine,
            total_iters,
            eta_min: 0.0,
            warmup_iters: 0,
        }
    }

    pub fn multistep(total_iters: u64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Multistep,
            ..ScheduleConfig::cosine(total_iters)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::config("total_iters", "must be at least 1"));
        }
        if self.warmup_iters >= self.total_iters {
            return Err(Error::config("warmup_iters", "must be smaller than total_iters"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min.is_finite()) {
            return Err(Error::config("eta_min", "must be a non-negative number"));
        }
        Ok(())
    }

    fn check_t(&self, t: u64) -> Result<()> {
        if t > self.total_iters {
            return Err(Error::Schedule {
                t,
                total: self.total_iters,
            });
        }
        Ok(())
    }

    /// Learning rate at iteration `t` for base rate `eta`.
    pub fn lr_at(&self, t: u64, eta: f64) -> Result<f64> {
        match self.kind {
            ScheduleKind::Cosine => cosine_lr(t, self, eta),
            ScheduleKind::Multistep => multistep_lr(t, self, eta),
        }
    }
}

/// `base_lr * new_bs / base_bs`. The ratio is reduced first so that equal
/// batch sizes return `base_lr` unchanged and whole multiples round once.
pub fn scale_lr(base_lr: f64, base_bs: usize, new_bs: usize) -> Result<f64> {
    if base_bs == 0 || new_bs == 0 {
        return Err(Error::config("batch_size", "batch sizes must be positive"));
    }
    let g = gcd(base_bs, new_bs);
    let (num, den) = (new_bs / g, base_bs / g);
    if den == 1 {
        Ok(base_lr * num as f64)
    } else {
        Ok(base_lr * num as f64 / den as f64)
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Linear warmup from 0, then cosine annealing from `eta_max` to `eta_min`.
pub fn cosine_lr(t: u64, sched: &ScheduleConfig, eta_max: f64) -> Result<f64> {
    sched.check_t(t)?;
    let w = sched.warmup_iters;
    if t < w {
        return Ok(eta_max * t as f64 / w as f64);
    }
    let progress = (t - w) as f64 / (sched.total_iters - w) as f64;
    Ok(sched.eta_min + 0.5 * (eta_max - sched.eta_min) * (1.0 + (PI * progress).cos()))
}

/// Halves `eta0` at every 20% of the budget.
pub fn multistep_lr(t: u64, sched: &ScheduleConfig, eta0: f64) -> Result<f64> {
    sched.check_t(t)?;
    let k = (5 * t) / sched.total_iters;
    Ok(eta0 * 0.5f64.powi(k as i32))
}
