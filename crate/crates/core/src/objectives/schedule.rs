//! Scalar schedules over training steps.

use crate::error::{Error, Result};

/// Sigmoid-shaped ramp-up `exp(-5 (1 - x)^2)` with
/// `x = clamp(step / ramp_steps, 0, 1)`; 1 when `ramp_steps` is 0.
pub fn rampup_sigmoid(step: u64, ramp_steps: u64) -> f64 {
    if ramp_steps == 0 {
        return 1.0;
    }
    let x = (step as f64 / ramp_steps as f64).clamp(0.0, 1.0);
    (-5.0 * (1.0 - x) * (1.0 - x)).exp()
}

/// Ramp-down multiplier: 1 before `start`, then `exp(-12.5 x^2)` where `x`
/// is the elapsed fraction of the `[start, total]` window, i.e. the
/// complement of the `1 - exp(-12.5 x^2)` shape.
pub fn rampdown_sigmoid(step: u64, start: u64, total: u64) -> f64 {
    if step < start || total <= start {
        return 1.0;
    }
    let x = ((step - start) as f64 / (total - start) as f64).clamp(0.0, 1.0);
    1.0 - (1.0 - (-12.5 * x * x).exp())
}

/// `max_value * 0.5 * (1 + cos(pi * min(step / horizon, 1)))`.
pub fn cosine_anneal(step: u64, horizon: u64, max_value: f64) -> f64 {
    if horizon == 0 {
        return max_value;
    }
    let x = (step as f64 / horizon as f64).min(1.0);
    max_value * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

/// `before` for steps strictly under `switch_step`, `after` from it on.
pub fn two_phase(step: u64, switch_step: u64, before: f64, after: f64) -> f64 {
    if step < switch_step {
        before
    } else {
        after
    }
}

/// Step-dependent hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// Ramp-up of the consistency weight and the learning rate.
    pub rampup_steps: u64,
    /// Length of the ramp-down window at the end of training (0 = none).
    pub rampdown_steps: u64,
    pub total_steps: u64,
    /// Adam beta2 and EMA decay switch from their "before" to "after"
    /// values here.
    pub phase_switch_step: u64,
    pub beta2_before: f64,
    pub beta2_after: f64,
    pub ema_decay_before: f64,
    pub ema_decay_after: f64,
    /// Cosine annealing of the learning rate over this many steps (0 = off).
    pub cosine_horizon: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            rampup_steps: 40_000,
            rampdown_steps: 0,
            total_steps: 180_000,
            phase_switch_step: 40_000,
            beta2_before: 0.99,
            beta2_after: 0.999,
            ema_decay_before: 0.99,
            ema_decay_after: 0.999,
            cosine_horizon: 0,
        }
    }
}

/// Hyperparameter values resolved at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub rampup: f64,
    pub rampdown: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    pub consistency_weight: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.phase_switch_step > self.total_steps {
            errs.push(format!(
                "phase switch step {} exceeds total steps {}",
                self.phase_switch_step, self.total_steps
            ));
        }
        if self.rampdown_steps > self.total_steps {
            errs.push(format!(
                "ramp-down window {} exceeds total steps {}",
                self.rampdown_steps, self.total_steps
            ));
        }
        for (name, v) in [
            ("beta2_before", self.beta2_before),
            ("beta2_after", self.beta2_after),
        ] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("ema_decay_before", self.ema_decay_before),
            ("ema_decay_after", self.ema_decay_after),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Learning rate ramps up with the consistency weight and, when
    /// configured, ramps down (or cosine-anneals) to zero; beta1 ramps down
    /// from `beta1_max` to `beta1_floor` in the same window.
    pub fn values_at(
        &self,
        step: u64,
        lr_max: f64,
        beta1_max: f64,
        beta1_floor: f64,
        consistency_max: f64,
    ) -> ScheduleValues {
        let rampup = rampup_sigmoid(step, self.rampup_steps);
        let rampdown = if self.rampdown_steps > 0 {
            rampdown_sigmoid(step, self.total_steps - self.rampdown_steps, self.total_steps)
        } else {
            1.0
        };
        let mut lr = lr_max * rampup * rampdown;
        if self.cosine_horizon > 0 {
            lr = cosine_anneal(step, self.cosine_horizon, lr);
        }
        ScheduleValues {
            rampup,
            rampdown,
            lr,
            beta1: beta1_floor + rampdown * (beta1_max - beta1_floor),
            beta2: two_phase(step, self.phase_switch_step, self.beta2_before, self.beta2_after),
            ema_decay: two_phase(
                step,
                self.phase_switch_step,
                self.ema_decay_before,
                self.ema_decay_after,
            ),
            consistency_weight: consistency_max * rampup,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rampup_values() {
        assert_eq!(rampup_sigmoid(100, 100), 1.0);
        assert!((rampup_sigmoid(0, 100) - (-5f64).exp()).abs() < 1e-15);
        assert!((rampup_sigmoid(0, 100) - 0.0067379).abs() < 1e-7);
        assert!((rampup_sigmoid(50, 100) - 0.286505).abs() < 1e-6);
        assert_eq!(rampup_sigmoid(7, 0), 1.0);
        assert_eq!(rampup_sigmoid(500, 100), 1.0);
    }

    #[test]
    fn rampdown_values() {
        assert_eq!(rampdown_sigmoid(10, 50, 100), 1.0);
        assert!((rampdown_sigmoid(100, 50, 100) - 3.727e-6).abs() < 1e-9);
        assert!((rampdown_sigmoid(70, 50, 100) - 0.135335).abs() < 1e-6);
        assert_eq!(rampdown_sigmoid(50, 50, 100), 1.0);
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine_anneal(0, 100, 0.2), 0.2);
        assert!(cosine_anneal(100, 100, 0.2).abs() < 1e-16);
        assert!((cosine_anneal(50, 100, 0.2) - 0.1).abs() < 1e-16);
        assert!(cosine_anneal(200, 100, 0.2).abs() < 1e-16);
    }

    #[test]
    fn two_phase_boundary() {
        assert_eq!(two_phase(0, 40_000, 0.99, 0.999), 0.99);
        assert_eq!(two_phase(39_999, 40_000, 0.99, 0.999), 0.99);
        assert_eq!(two_phase(40_000, 40_000, 0.99, 0.999), 0.999);
        assert_eq!(two_phase(0, 0, 0.99, 0.999), 0.999);
    }

    #[test]
    fn resolved_values() {
        let cfg = ScheduleConfig {
            rampup_steps: 100,
            rampdown_steps: 50,
            total_steps: 300,
            phase_switch_step: 100,
            ..ScheduleConfig::default()
        };
        let v = cfg.values_at(0, 0.003, 0.9, 0.5, 8.0);
        assert!((v.consistency_weight - 8.0 * (-5f64).exp()).abs() < 1e-12);
        assert_eq!((v.beta2, v.ema_decay, v.beta1), (0.99, 0.99, 0.9));
        let end = cfg.values_at(300, 0.003, 0.9, 0.5, 8.0);
        assert!(end.lr < 1e-7);
        assert!((end.beta1 - 0.5).abs() < 1e-5);
        assert_eq!(end.beta2, 0.999);
        assert!(cfg.validate().is_ok());
        assert!(ScheduleConfig {
            phase_switch_step: 400,
            ..cfg.clone()
        }
        .validate()
        .is_err());
    }
}
