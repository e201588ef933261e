//! One training step: the cost graph, its gradients, the optimizer update
//! and the teacher average.

use super::adam::{AdamHyper, AdamState};
use super::config::{Algorithm, TrainConfig};
use super::ema::ema_update;
use super::temporal::TemporalEnsembleStore;
use crate::autodiff::{Tape, Var};
use crate::data::{augment_batch, Batch};
use crate::error::{Error, Result};
use crate::nn::{forward, BoundWeights, GradientSet, ModelSpec, WeightSet};
use crate::objectives::{
    classification_cost, consistency_cost, coupling_cost, CostBreakdown, ScheduleValues,
};
use crate::random::RandomSource;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Student θ, teacher θ', optimizer moments and (for temporal ensembling)
/// the prediction store.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<T> {
    pub algorithm: Algorithm,
    pub step: u64,
    pub student: WeightSet<T>,
    pub teacher: WeightSet<T>,
    pub adam: AdamState<T>,
    pub ensemble: Option<TemporalEnsembleStore>,
    /// Sampler epoch at the last ensemble commit.
    pub epoch_seen: u64,
}

impl<T: Scalar> TrainerState<T> {
    /// The teacher starts as a copy of the student. `examples` sizes the
    /// temporal-ensembling store.
    pub fn new(
        spec: &ModelSpec,
        cfg: &TrainConfig,
        student: WeightSet<T>,
        examples: usize,
    ) -> Result<Self> {
        let ensemble = match cfg.algorithm {
            Algorithm::TemporalEnsembling => Some(TemporalEnsembleStore::new(
                examples,
                spec.classes(),
                cfg.ensemble_decay,
            )?),
            _ => None,
        };
        Ok(TrainerState {
            algorithm: cfg.algorithm,
            step: 0,
            teacher: student.clone(),
            adam: AdamState::new(&student),
            student,
            ensemble,
            epoch_seen: 0,
        })
    }

    /// Folds pending ensemble predictions when the sampler has moved to a
    /// new epoch.
    pub fn observe_epoch(&mut self, epoch: u64) -> usize {
        if epoch == self.epoch_seen {
            return 0;
        }
        self.epoch_seen = epoch;
        self.ensemble.as_mut().map_or(0, |s| s.commit())
    }
}

/// The differentiable cost of one step, kept open for inspection.
pub struct StepGraph<T: Scalar> {
    pub tape: Tape<T>,
    pub total: Var,
    pub breakdown: CostBreakdown,
    pub student: BoundWeights,
    /// Second trainable binding of the student weights (Π model).
    pub second: Option<BoundWeights>,
    /// Teacher weights bound as constants (mean teacher).
    pub teacher: Option<BoundWeights>,
    /// Student class probabilities of the classification head.
    pub student_probs: Var,
    pub batch_means: Vec<(String, Tensor<T>)>,
}

fn side_inputs<T: Scalar>(
    cfg: &TrainConfig,
    inputs: &Tensor<T>,
    augment: bool,
    src: RandomSource,
) -> Result<Tensor<T>> {
    if augment && !cfg.augmentation.is_identity() {
        augment_batch(inputs, &cfg.augmentation, &src)
    } else {
        Ok(inputs.clone())
    }
}

fn row_targets<T: Scalar>(
    store: &TemporalEnsembleStore,
    ids: &[usize],
) -> Result<(Tensor<T>, Vec<bool>)> {
    let c = store.classes;
    let mut data = vec![T::zero(); ids.len() * c];
    let mut rows = vec![false; ids.len()];
    for (r, &id) in ids.iter().enumerate() {
        if let Some(t) = store.target(id)? {
            for (d, v) in data[r * c..(r + 1) * c].iter_mut().zip(t) {
                *d = T::from_f64_lossy(v);
            }
            rows[r] = true;
        }
    }
    Ok((Tensor::new(vec![ids.len(), c], data)?, rows))
}

/// Builds the total cost of `batch` under `state` with the consistency
/// weight `consistency_weight`. Noise and augmentation draws come from
/// named forks of `rng`.
pub fn build_step_graph<T: Scalar>(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    state: &TrainerState<T>,
    batch: &Batch<T>,
    rng: &RandomSource,
    consistency_weight: f64,
) -> Result<StepGraph<T>> {
    let mut tape = Tape::new();
    let student_x = side_inputs(
        cfg,
        &batch.inputs,
        cfg.student_noise.augment,
        rng.fork("augment-student", 0),
    )?;
    let student = state.student.bind(&mut tape, true);
    let xs = tape.constant(student_x.clone());
    let out = forward(spec, &student, xs, &cfg.student_noise, &rng.fork("student", 0), &mut tape)?;
    let cons_head = if spec.heads > 1 { 1 } else { 0 };
    let q = out.probs[cons_head];

    let mut second = None;
    let mut teacher = None;
    let target: Option<(Var, Option<Vec<bool>>)> = match cfg.algorithm {
        Algorithm::Supervised => None,
        Algorithm::Pi | Algorithm::MeanTeacher => {
            let xt = if cfg.algorithm == Algorithm::Pi && cfg.pi_shared_augmentation {
                student_x
            } else {
                side_inputs(
                    cfg,
                    &batch.inputs,
                    cfg.teacher_noise.augment,
                    rng.fork("augment-teacher", 0),
                )?
            };
            let bound = if cfg.algorithm == Algorithm::Pi {
                state.student.bind(&mut tape, true)
            } else {
                state.teacher.bind(&mut tape, false)
            };
            let xt = tape.constant(xt);
            let tout = forward(spec, &bound, xt, &cfg.teacher_noise, &rng.fork("teacher", 0), &mut tape)?;
            if cfg.algorithm == Algorithm::Pi {
                second = Some(bound);
            } else {
                teacher = Some(bound);
            }
            Some((tout.probs[0], None))
        }
        Algorithm::TemporalEnsembling => {
            let store = state
                .ensemble
                .as_ref()
                .ok_or_else(|| Error::Config("temporal ensembling state has no store".into()))?;
            let (t, rows) = row_targets(store, &batch.ids)?;
            Some((tape.constant(t), Some(rows)))
        }
    };

    let mut breakdown = CostBreakdown {
        class_weight: cfg.class_weight,
        ..Default::default()
    };
    let mut terms = Vec::new();
    if let Some(c) = classification_cost(&mut tape, out.probs[0], &batch.labels)? {
        breakdown.classification = tape.value(c).item().as_f64();
        terms.push(tape.scale(c, cfg.class_weight)?);
    }
    if let Some((p, rows)) = target {
        breakdown.consistency_weight = consistency_weight;
        if let Some(c) = consistency_cost(&mut tape, cfg.consistency, p, q, rows.as_deref())? {
            breakdown.consistency_raw = tape.value(c).item().as_f64();
            terms.push(tape.scale(c, consistency_weight)?);
        }
    }
    if spec.heads > 1 {
        breakdown.coupling_weight = cfg.coupling_weight;
        let c = coupling_cost(&mut tape, out.logits[0], out.logits[1])?;
        breakdown.coupling = tape.value(c).item().as_f64();
        terms.push(tape.scale(c, cfg.coupling_weight)?);
    }
    let total = match terms.split_first() {
        None => tape.constant(Tensor::scalar(T::zero())),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    breakdown.total = tape.value(total).item().as_f64();
    Ok(StepGraph {
        tape,
        total,
        breakdown,
        student,
        second,
        teacher,
        student_probs: out.probs[0],
        batch_means: out.batch_means,
    })
}

impl<T: Scalar> StepGraph<T> {
    /// Gradient of the total with respect to the student weights, summed
    /// over both bindings for the Π model.
    pub fn student_gradients(&mut self, weights: &WeightSet<T>) -> Result<GradientSet<T>> {
        let grads = self.tape.backward(self.total)?;
        let mut g = self.student.gradients(weights, &grads);
        if let Some(second) = &self.second {
            g = g.add(&second.gradients(weights, &grads))?;
        }
        Ok(g)
    }

    /// Per-binding gradients: (student branch, second branch or teacher).
    /// Constant bindings report zeros.
    pub fn branch_gradients(
        &mut self,
        student: &WeightSet<T>,
        other: &WeightSet<T>,
    ) -> Result<(GradientSet<T>, Option<GradientSet<T>>)> {
        let grads = self.tape.backward(self.total)?;
        let first = self.student.gradients(student, &grads);
        let bound = self.second.as_ref().or(self.teacher.as_ref());
        Ok((first, bound.map(|b| b.gradients(other, &grads))))
    }
}

/// What a step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub cost: CostBreakdown,
    pub schedule: ScheduleValues,
}

/// Advances `state` by one step on `batch`. On any error (including a
/// non-finite cost or gradient) `state` is left untouched.
pub fn train_step<T: Scalar>(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    state: &mut TrainerState<T>,
    batch: &Batch<T>,
    rng: &RandomSource,
) -> Result<StepReport> {
    let values = cfg.schedule.values_at(
        state.step,
        cfg.lr_max,
        cfg.beta1_max,
        cfg.beta1_floor,
        cfg.consistency_max,
    );
    let weight = match cfg.algorithm {
        Algorithm::Supervised => 0.0,
        _ => values.consistency_weight,
    };
    let mut graph = build_step_graph(spec, cfg, state, batch, rng, weight)?;
    if !graph.breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            op: "train_step".into(),
            detail: format!("total cost {} at step {}", graph.breakdown.total, state.step),
        });
    }
    let grads = graph.student_gradients(&state.student)?;
    if !grads.max_abs().is_finite() {
        return Err(Error::NonFinite {
            op: "train_step".into(),
            detail: format!("gradient at step {}", state.step),
        });
    }
    let hyper = AdamHyper {
        lr: values.lr,
        beta1: values.beta1,
        beta2: values.beta2,
        epsilon: cfg.adam_epsilon,
    };
    let (mut student, adam) = state.adam.step(&state.student, &grads, hyper)?;
    let d = T::from_f64_lossy(cfg.running_mean_decay);
    let one_d = T::from_f64_lossy(1.0 - cfg.running_mean_decay);
    for (name, mean) in &graph.batch_means {
        let rm = student
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter `{name}`")))?;
        *rm = rm.zip_map(mean, |r, m| d * r + one_d * m)?;
    }
    let teacher = ema_update(&state.teacher, &student, values.ema_decay)?;

    if let Some(store) = state.ensemble.as_mut() {
        let probs = graph.tape.value(graph.student_probs);
        let c = probs.last_dim();
        for (r, &id) in batch.ids.iter().enumerate() {
            let row: Vec<f64> = probs.data()[r * c..(r + 1) * c].iter().map(|v| v.as_f64()).collect();
            store.record(id, &row)?;
        }
    }
    state.student = student;
    state.teacher = teacher;
    state.adam = adam;
    state.step += 1;
    Ok(StepReport {
        step: state.step,
        cost: graph.breakdown,
        schedule: values,
    })
}
