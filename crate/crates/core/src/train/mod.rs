//! Supervised, Π-model, mean-teacher and temporal-ensembling training.

mod adam;
mod checkpoint;
mod config;
mod ema;
mod eval;
mod session;
mod step;
mod temporal;

pub use adam::{AdamHyper, AdamState, DEFAULT_BETA1, DEFAULT_EPSILON, DEFAULT_LR};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Algorithm, TrainConfig};
pub use ema::ema_update;
pub use eval::{argmax, evaluate, EvalResult, EVAL_CHUNK};
pub use session::Session;
pub use step::{build_step_graph, train_step, StepGraph, StepReport, TrainerState};
pub use temporal::{temporal_target, TemporalEnsembleStore};

#[cfg(test)]
mod tests;
