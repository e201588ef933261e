//! Cost functions and hyperparameter schedules.

mod cost;
mod schedule;

pub use cost::{
    classification_cost, classification_value, consistency_c_tau, consistency_cost,
    consistency_mse, consistency_value, coupling_cost, coupling_value, ConsistencyKind,
    CostBreakdown, LOG_FLOOR,
};
pub use schedule::{
    cosine_anneal, rampdown_sigmoid, rampup_sigmoid, two_phase, ScheduleConfig, ScheduleValues,
};
