//! Optimizers, learning-rate schedules, batch-size scaling and the precision
//! policy.

pub mod optimizer;
pub mod precision;
pub mod schedule;

pub use optimizer::{
    adam_step, lamb_step, optimizer_step, step_model, trust_ratio, OptimizerHyper, OptimizerKind, OptimizerState,
    TrustRatio,
};
pub use precision::{
    LossScaler, Precision, PrecisionPolicy, StepAction, INITIAL_LOSS_SCALE, LOSS_SCALE_GROWTH_INTERVAL,
};
pub use schedule::{cosine_lr, multistep_lr, scale_lr, ScheduleConfig, ScheduleKind};
