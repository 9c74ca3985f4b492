//! One-cycle learning-rate policy with cosine annealing in both phases.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub total_steps: usize,
    pub pct_up: f64,
}

impl OneCycleSchedule {
    pub fn new(max_lr: f64, total_steps: usize) -> Result<Self> {
        let s = Self {
            max_lr,
            div_factor: 25.0,
            final_div_factor: 1e4,
            total_steps,
            pct_up: 0.3,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return invalid(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !(self.div_factor >= 1.0 && self.final_div_factor >= 1.0) {
            return invalid("div factors must be ≥ 1");
        }
        if !(self.pct_up > 0.0 && self.pct_up < 1.0) {
            return invalid(format!("pct_up must be in (0, 1), got {}", self.pct_up));
        }
        if self.total_steps < 2 {
            return invalid("one-cycle schedule needs at least two steps");
        }
        Ok(())
    }

    /// Step at which the peak is reached.
    pub fn peak_step(&self) -> usize {
        ((self.pct_up * self.total_steps as f64).round() as usize).clamp(1, self.total_steps - 1)
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    if frac <= 0.0 {
        return from;
    }
    if frac >= 1.0 {
        return to;
    }
    to + 0.5 * (from - to) * (1.0 + (PI * frac).cos())
}

pub fn one_cycle_lr(step: usize, s: &OneCycleSchedule) -> Result<f64> {
    s.validate()?;
    if step >= s.total_steps {
        return invalid(format!("step {step} beyond {} total steps", s.total_steps));
    }
    let start = s.max_lr / s.div_factor;
    let end = start / s.final_div_factor;
    let up = s.peak_step();
    if step <= up {
        return Ok(cosine(start, s.max_lr, step as f64 / up as f64));
    }
    let down = (s.total_steps - 1 - up) as f64;
    Ok(cosine(s.max_lr, end, (step - up) as f64 / down))
}
