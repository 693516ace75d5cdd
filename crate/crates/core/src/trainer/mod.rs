//! Training loop, checkpoints and the multi-stage procedures.

pub mod checkpoint;
pub mod loss;
pub mod procedures;
pub mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, HistoryEntry, StageRecord, VERSION_MAJOR, VERSION_MINOR,
};
pub use loss::{l1_grad, l1_loss};
pub use procedures::{
    check_warm_start, default_full_iters, finetune_large_patch, large_patch_batch, warm_start, WarmStartOutcome,
    WarmStartPlan, STAGE_LARGE_PATCH, STAGE_TRAIN, STAGE_WARM_FULL, STAGE_WARM_TAIL,
};
pub use train::{
    nan_guard, run_stage, sample_branch_mask, stochastic_depth_forward, train, validate, Faults, Plateau,
    StageOptions, TrainConfig, TrainData, TrainOutcome,
};
