use serde::{Deserialize, Serialize};

use super::TrainerError;

/// Linear warmup from 0 to `peak` over `[0, warmup]`, then linear decay to 0
/// at `total`.
pub fn lr_at(step: u64, total: u64, warmup: u64, peak: f64) -> Result<f64, TrainerError> {
    if !(0 < warmup && warmup < total) {
        return Err(TrainerError::InvalidSchedule(format!(
            "need 0 < warmup ({warmup}) < total ({total})"
        )));
    }
    if step > total {
        return Err(TrainerError::InvalidSchedule(format!(
            "step {step} beyond total {total}"
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(TrainerError::InvalidSchedule(format!(
            "peak lr {peak} must be positive"
        )));
    }
    Ok(if step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub batch: usize,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSchedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    /// Number of steps run in phase 1; phase 2 takes the remainder.
    pub phase1_steps: u64,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
}

/// Fraction of all steps spent in phase 1 (900k of 2M).
pub const PHASE1_FRACTION: f64 = 0.45;
/// Warmup fraction of the full schedule (10k of 2M).
pub const WARMUP_FRACTION: f64 = 0.005;

impl PretrainSchedule {
    pub fn base() -> Self {
        Self {
            total_steps: 2_000_000,
            warmup_steps: 10_000,
            peak_lr: 1e-4,
            phase1_steps: 900_000,
            phase1: PhaseConfig {
                batch: 2048,
                max_len: 128,
            },
            phase2: PhaseConfig {
                batch: 256,
                max_len: 512,
            },
        }
    }

    /// The base schedule shrunk to `total_steps`, keeping the phase-1 and
    /// warmup fractions.
    pub fn scaled(total_steps: u64) -> Self {
        let mut s = Self::base();
        s.total_steps = total_steps;
        s.phase1_steps = (total_steps as f64 * PHASE1_FRACTION).round() as u64;
        s.warmup_steps = ((total_steps as f64 * WARMUP_FRACTION).round() as u64).max(1);
        s
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: String| Err(TrainerError::InvalidSchedule(m));
        if self.phase1_steps >= self.total_steps {
            return bad(format!(
                "phase1_steps {} must be below total_steps {}",
                self.phase1_steps, self.total_steps
            ));
        }
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return bad(format!(
                "warmup_steps {} must lie in (0, {})",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.peak_lr > 0.0) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if self.phase1.batch == 0 || self.phase2.batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> Result<f64, TrainerError> {
        lr_at(step, self.total_steps, self.warmup_steps, self.peak_lr)
    }

    /// 1 or 2.
    pub fn phase_of(&self, step: u64) -> u8 {
        if step < self.phase1_steps {
            1
        } else {
            2
        }
    }

    pub fn phase(&self, phase: u8) -> &PhaseConfig {
        if phase == 1 {
            &self.phase1
        } else {
            &self.phase2
        }
    }
}
