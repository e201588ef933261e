//! The training loop: a sampler feeding [`train_step`].

use super::config::{Algorithm, TrainConfig};
use super::step::{train_step, StepReport, TrainerState};
use crate::data::{SamplerConfig, SamplerState, StreamPosition, TrainingSet};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, WeightSet};
use crate::random::RandomSource;
use crate::scalar::Scalar;

pub struct Session<T: Scalar> {
    pub spec: ModelSpec,
    pub cfg: TrainConfig,
    pub set: TrainingSet<T>,
    pub sampler: SamplerState,
    pub state: TrainerState<T>,
    rng: RandomSource,
}

impl<T: Scalar> Session<T> {
    pub fn new(
        spec: ModelSpec,
        cfg: TrainConfig,
        set: TrainingSet<T>,
        sampler_cfg: SamplerConfig,
        initial: WeightSet<T>,
        rng: &RandomSource,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.algorithm == Algorithm::TemporalEnsembling
            && set.extra_len() > 0
        {
            return Err(Error::Config(
                "temporal ensembling keeps one target per example and refreshes it once per epoch; \
                 it cannot track an extra unlabeled pool"
                    .into(),
            ));
        }
        let sampler = SamplerState::new(&set, sampler_cfg, &rng.fork("sampler", 0))?;
        let state = TrainerState::new(&spec, &cfg, initial, set.len())?;
        Ok(Session {
            spec,
            cfg,
            set,
            sampler,
            state,
            rng: rng.clone(),
        })
    }

    /// Replaces trainer and sampler state, e.g. from a checkpoint.
    pub fn restore(&mut self, state: TrainerState<T>, positions: &[StreamPosition]) -> Result<()> {
        state.student.check_compatible(&self.state.student)?;
        if state.algorithm != self.cfg.algorithm {
            return Err(Error::Config(format!(
                "checkpoint was trained with {}, config says {}",
                state.algorithm, self.cfg.algorithm
            )));
        }
        self.sampler.restore(positions)?;
        self.state = state;
        Ok(())
    }

    /// Samples a batch and trains on it. Step `s` draws its noise from
    /// `rng.fork("step", s)`.
    pub fn step(&mut self) -> Result<StepReport> {
        let ids = self.sampler.next_ids();
        self.state.observe_epoch(self.sampler.epoch());
        let batch = self.set.gather(&ids)?;
        let rng = self.rng.fork("step", self.state.step);
        train_step(&self.spec, &self.cfg, &mut self.state, &batch, &rng)
    }
}
