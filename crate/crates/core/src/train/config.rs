use std::fmt;
use std::str::FromStr;

use super::adam::{DEFAULT_BETA1, DEFAULT_EPSILON, DEFAULT_LR};
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::NoiseConfig;
use crate::objectives::{ConsistencyKind, ScheduleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Supervised,
    Pi,
    MeanTeacher,
    TemporalEnsembling,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Supervised,
        Algorithm::Pi,
        Algorithm::MeanTeacher,
        Algorithm::TemporalEnsembling,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Supervised => "supervised",
            Algorithm::Pi => "pi",
            Algorithm::MeanTeacher => "mean_teacher",
            Algorithm::TemporalEnsembling => "temporal_ensembling",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            Algorithm::Supervised => 0,
            Algorithm::Pi => 1,
            Algorithm::MeanTeacher => 2,
            Algorithm::TemporalEnsembling => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Algorithm::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "supervised" => Ok(Algorithm::Supervised),
            "pi" => Ok(Algorithm::Pi),
            "mean_teacher" => Ok(Algorithm::MeanTeacher),
            "temporal_ensembling" => Ok(Algorithm::TemporalEnsembling),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (supervised|pi|mean_teacher|temporal_ensembling)"
            ))),
        }
    }
}

/// Everything a training step needs besides the model and the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub consistency: ConsistencyKind,
    /// Consistency weight after ramp-up.
    pub consistency_max: f64,
    /// Weight of the logit coupling between the two heads of a dual-head
    /// model; ignored with one head.
    pub coupling_weight: f64,
    /// Weight of the classification cost, normally the expected number of
    /// labeled rows per batch.
    pub class_weight: f64,
    pub schedule: ScheduleConfig,
    pub lr_max: f64,
    pub beta1_max: f64,
    /// Value β₁ ramps down to.
    pub beta1_floor: f64,
    pub adam_epsilon: f64,
    pub student_noise: NoiseConfig,
    pub teacher_noise: NoiseConfig,
    pub augmentation: AugmentConfig,
    /// Reuse the student's augmentation draw for the second Π branch.
    pub pi_shared_augmentation: bool,
    /// Prediction EMA decay of temporal ensembling.
    pub ensemble_decay: f64,
    pub running_mean_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::MeanTeacher,
            consistency: ConsistencyKind::Mse,
            consistency_max: 1.0,
            coupling_weight: 0.0,
            class_weight: 1.0,
            schedule: ScheduleConfig::default(),
            lr_max: DEFAULT_LR,
            beta1_max: DEFAULT_BETA1,
            beta1_floor: 0.5,
            adam_epsilon: DEFAULT_EPSILON,
            student_noise: NoiseConfig::training(),
            teacher_noise: NoiseConfig::training(),
            augmentation: AugmentConfig::default(),
            pi_shared_augmentation: false,
            ensemble_decay: 0.6,
            running_mean_decay: 0.999,
        }
    }
}

impl TrainConfig {
    /// Every violation, joined.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = self.consistency.validate() {
            errs.push(e.to_string());
        }
        match self.schedule.validate() {
            Err(Error::Config(e)) => errs.extend(e.split("; ").map(str::to_string)),
            Err(e) => errs.push(e.to_string()),
            Ok(()) => {}
        }
        let mut range = |name: &str, v: f64, lo: f64, hi: f64| {
            if !(v >= lo && v <= hi) {
                errs.push(format!("{name}={v} outside [{lo}, {hi}]"));
            }
        };
        range("consistency_max", self.consistency_max, 0.0, f64::MAX);
        range("coupling_weight", self.coupling_weight, 0.0, f64::MAX);
        range("class_weight", self.class_weight, 0.0, f64::MAX);
        range("lr", self.lr_max, 0.0, f64::MAX);
        range("beta1", self.beta1_max, 0.0, 0.999_999);
        range("beta1_floor", self.beta1_floor, 0.0, 0.999_999);
        range("adam_epsilon", self.adam_epsilon, f64::MIN_POSITIVE, f64::MAX);
        range("ensemble_decay", self.ensemble_decay, 0.0, 0.999_999);
        range("running_mean_decay", self.running_mean_decay, 0.0, 1.0);
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}
