//! Multi-stage procedures built on [`run_stage`]: large-patch finetuning and
//! the two-stage warm start from a x2 model.

use super::checkpoint::{Checkpoint, StageRecord};
use super::train::{run_stage, Plateau, StageOptions, TrainConfig, TrainData, TrainOutcome};
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::rng::derived;

pub const STAGE_TRAIN: &str = "train";
pub const STAGE_LARGE_PATCH: &str = "large_patch";
pub const STAGE_WARM_TAIL: &str = "warm_tail";
pub const STAGE_WARM_FULL: &str = "warm_full";

/// Stream id for the fresh tail drawn by a warm start.
const WARM_TAIL_STREAM: u64 = 1 << 44;

/// Batch size that keeps the pixels per step roughly constant when the patch
/// grows: `floor(batch * (old_patch / new_patch)^2)`, at least 1.
pub fn large_patch_batch(batch_size: usize, old_patch: usize, new_patch: usize) -> usize {
    (batch_size * old_patch * old_patch / (new_patch * new_patch)).max(1)
}

/// Full-model warm-start budget: half of the longer-training budget.
pub fn default_full_iters(longer_iters: u64) -> u64 {
    longer_iters / 2
}

/// Continues from `ckpt` with larger patches, a fresh cosine schedule over
/// `iters` and a fresh optimizer. `iters == 0` returns the parameters
/// unchanged with an empty stage recorded.
pub fn finetune_large_patch(
    ckpt: &Checkpoint,
    data: &TrainData,
    cfg: &TrainConfig,
    patch_size: usize,
    iters: u64,
    batch_size: Option<usize>,
) -> Result<Checkpoint> {
    if iters == 0 {
        let mut out = ckpt.clone();
        out.stages.push(StageRecord {
            name: STAGE_LARGE_PATCH.into(),
            iters: 0,
        });
        return Ok(out);
    }
    let cfg = TrainConfig {
        total_iters: iters,
        patch_size,
        batch_size: batch_size.unwrap_or_else(|| large_patch_batch(cfg.batch_size, cfg.patch_size, patch_size)),
        ..cfg.clone()
    };
    let opts = StageOptions::new(STAGE_LARGE_PATCH);
    Ok(run_stage(ckpt.model.clone(), data, &cfg, &opts, Some(ckpt))?.checkpoint)
}

#[derive(Debug, Clone)]
pub struct WarmStartPlan {
    pub target_scale: usize,
    /// Cap on the tail-only stage.
    pub tail_iters: u64,
    pub full_iters: u64,
    /// Early stop for the tail-only stage.
    pub plateau: Option<Plateau>,
}

#[derive(Debug, Clone)]
pub struct WarmStartOutcome {
    pub tail: TrainOutcome,
    pub full: TrainOutcome,
}

impl WarmStartOutcome {
    pub fn checkpoint(&self) -> &Checkpoint {
        &self.full.checkpoint
    }
}

/// Checks the source and target scales of a warm start.
pub fn check_warm_start(source_scale: usize, target_scale: usize) -> Result<()> {
    if source_scale != 2 {
        return Err(Error::config(
            "from",
            format!("warm start needs a x2 source checkpoint, got x{source_scale}"),
        ));
    }
    if !matches!(target_scale, 3 | 4) {
        return Err(Error::config("scale", format!("warm start targets x3 or x4, got x{target_scale}")));
    }
    Ok(())
}

/// Stage 1 swaps in a fresh tail for `target_scale` and trains only the tail;
/// stage 2 trains everything. `data` must be at the target scale.
pub fn warm_start(
    source: &Checkpoint,
    data: &TrainData,
    cfg: &TrainConfig,
    plan: &WarmStartPlan,
    base: &StageOptions,
) -> Result<WarmStartOutcome> {
    check_warm_start(source.model.config().scale, plan.target_scale)?;
    let mut rng = derived(cfg.seed, WARM_TAIL_STREAM);
    let model = source.model.swap_tail(plan.target_scale, &mut rng)?;

    let tail_cfg = TrainConfig {
        total_iters: plan.tail_iters,
        ..cfg.clone()
    };
    let tail_opts = StageOptions {
        stage: STAGE_WARM_TAIL.into(),
        trainable: Trainable::TAIL_ONLY,
        plateau: plan.plateau,
        ..base.clone()
    };
    let tail = run_stage(model, data, &tail_cfg, &tail_opts, Some(source))?;

    let full_cfg = TrainConfig {
        total_iters: plan.full_iters,
        ..cfg.clone()
    };
    let full_opts = StageOptions {
        stage: STAGE_WARM_FULL.into(),
        trainable: Trainable::ALL,
        plateau: None,
        ..base.clone()
    };
    let full = run_stage(tail.checkpoint.model.clone(), data, &full_cfg, &full_opts, Some(&tail.checkpoint))?;
    Ok(WarmStartOutcome { tail, full })
}
