//! The training loop: sample, forward, L1, backward, step, evaluate.

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, HistoryEntry, StageRecord};
use super::loss::{l1_grad, l1_loss};
use crate::data::{make_batch_stream, DatasetIndex, LoadedPair, SamplerConfig, StreamOptions, TrainingSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pairs, EvalProtocol};
use crate::model::{BranchPolicy, Model, Trainable};
use crate::optim::{
    step_model, OptimizerHyper, OptimizerState, Precision, PrecisionPolicy, ScheduleConfig, StepAction,
};
use crate::rng::{derived, RngSnapshot, SrRng};
use crate::tensor::Tensor;

/// Stream id of the generator that draws stochastic-depth masks.
const TRAINER_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Peak learning rate; overrides `optimizer.lr`.
    pub lr: f64,
    pub total_iters: u64,
    pub optimizer: OptimizerHyper,
    /// `total_iters` here is replaced by the field above.
    pub schedule: ScheduleConfig,
    /// LR patch size; overrides `sampler.patch_size`.
    pub patch_size: usize,
    pub precision: Precision,
    /// `seed` here is replaced by the field below.
    pub sampler: SamplerConfig,
    pub stochastic_depth_p: f64,
    /// Validation period in iterations; 0 evaluates only at the end.
    pub eval_every: u64,
    pub seed: u64,
    pub workers: usize,
    /// Number of trailing files (by sorted name) held out for validation.
    pub val_count: usize,
    /// Optional centred HR crop applied to validation images.
    pub val_crop: Option<usize>,
    /// Gradient clipping is not implemented; any value is rejected.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Large-batch cosine recipe with Lamb.
    pub fn baseline() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 0.0032,
            total_iters: 80_000,
            optimizer: OptimizerHyper::lamb(0.0032),
            schedule: ScheduleConfig::cosine(80_000),
            patch_size: 48,
            precision: Precision::Fp32,
            sampler: SamplerConfig::default(),
            stochastic_depth_p: 0.0,
            eval_every: 1000,
            seed: 0,
            workers: 1,
            val_count: 10,
            val_crop: None,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.total_iters == 0 {
            return Err(Error::config("total_iters", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.stochastic_depth_p) {
            return Err(Error::config("stochastic_depth_p", "must lie in [0, 1]"));
        }
        if self.grad_clip.is_some() {
            return Err(Error::config("grad_clip", "gradient clipping is not supported"));
        }
        if let Some(c) = self.val_crop {
            if c < 16 {
                return Err(Error::config("val_crop", "must be at least 16"));
            }
        }
        self.hyper().validate()?;
        self.resolved_schedule().validate()?;
        self.resolved_sampler().validate()
    }

    pub fn hyper(&self) -> OptimizerHyper {
        OptimizerHyper {
            lr: self.lr,
            ..self.optimizer
        }
    }

    pub fn resolved_schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_iters: self.total_iters,
            ..self.schedule
        }
    }

    pub fn resolved_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            patch_size: self.patch_size,
            seed: self.seed,
            ..self.sampler.clone()
        }
    }
}

/// Training and validation images for one scale.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub scale: usize,
    pub train: Arc<TrainingSet>,
    pub val: Vec<LoadedPair>,
}

impl TrainData {
    /// Holds out the last `val_count` files of `index` for validation.
    pub fn from_index(index: &DatasetIndex, val_count: usize, val_crop: Option<usize>) -> Result<Self> {
        if index.len() <= val_count {
            return Err(Error::config(
                "val_count",
                format!("{val_count} held-out files leave nothing of {} to train on", index.len()),
            ));
        }
        let (train_idx, val_idx) = index.split_tail(val_count);
        let train = TrainingSet::load(&train_idx)?;
        let val = TrainingSet::load(&val_idx)?.pairs;
        Self::from_parts(train, val, val_crop)
    }

    pub fn from_parts(train: TrainingSet, val: Vec<LoadedPair>, val_crop: Option<usize>) -> Result<Self> {
        let scale = train.scale;
        let val = match val_crop {
            None => val,
            Some(c) => val.into_iter().map(|p| center_crop(p, c, scale)).collect::<Result<_>>()?,
        };
        Ok(TrainData {
            scale,
            train: Arc::new(train),
            val,
        })
    }
}

fn center_crop(p: LoadedPair, hr_size: usize, scale: usize) -> Result<LoadedPair> {
    let side = hr_size / scale;
    let (lh, lw) = p.lr.dims();
    let (h, w) = (side.min(lh), side.min(lw));
    let (top, left) = ((lh - h) / 2, (lw - w) / 2);
    Ok(LoadedPair {
        name: p.name,
        lr: p.lr.crop(top, left, h, w)?,
        hr: p.hr.crop(top * scale, left * scale, h * scale, w * scale)?,
    })
}

/// Stop rule for a stage: end once validation PSNR has improved by less than
/// `min_delta_db` over `patience` consecutive evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub min_delta_db: f64,
    pub patience: usize,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau {
            min_delta_db: 0.01,
            patience: 2,
        }
    }
}

/// Deliberate failures for exercising the guards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Faults {
    /// Replace the loss at this iteration with NaN.
    pub nonfinite_loss_at: Option<u64>,
    /// Set one gradient element to infinity at this iteration.
    pub grad_overflow_at: Option<u64>,
    /// Set the named parameter to infinity before this iteration.
    pub param_inf_at: Option<(u64, String)>,
}

#[derive(Debug, Clone)]
pub struct StageOptions {
    pub stage: String,
    pub trainable: Trainable,
    pub plateau: Option<Plateau>,
    pub faults: Faults,
    /// Write `<dir>/<stage>_<iteration>.ckpt` every `checkpoint_every` iterations.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    /// Print a progress line to stderr every this many iterations (0 = never).
    pub log_every: u64,
}

impl StageOptions {
    pub fn new(stage: &str) -> Self {
        StageOptions {
            stage: stage.to_string(),
            trainable: Trainable::ALL,
            plateau: None,
            faults: Faults::default(),
            checkpoint_dir: None,
            checkpoint_every: 0,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Training loss of every iteration run.
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Aborts on a non-finite loss or parameter, naming the iteration and tensor.
pub fn nan_guard(loss: f64, model: &Model<f32>, t: u64, seed: u64, lr: f64) -> Result<()> {
    let fail = |tensor: &str| Error::NonFinite {
        tensor: tensor.to_string(),
        iteration: t,
        seed,
        lr,
    };
    if !loss.is_finite() {
        return Err(fail("loss"));
    }
    match model.params().iter().find(|p| !p.tensor.all_finite()) {
        Some(p) => Err(fail(&p.name)),
        None => Ok(()),
    }
}

/// Independent keep/drop decision per residual block.
pub fn sample_branch_mask<R: Rng + ?Sized>(n_blocks: usize, p_skip: f64, rng: &mut R) -> Vec<bool> {
    (0..n_blocks).map(|_| rng.random::<f64>() >= p_skip).collect()
}

/// Training-mode forward pass that drops each block's branch with
/// probability `p_skip`.
pub fn stochastic_depth_forward<R: Rng + ?Sized>(
    model: &Model<f32>,
    x: &Tensor<f32>,
    p_skip: f64,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let policy = train_policy(model, p_skip, rng);
    model.forward_with(x, &policy)
}

fn train_policy<R: Rng + ?Sized>(model: &Model<f32>, p_skip: f64, rng: &mut R) -> BranchPolicy {
    if p_skip > 0.0 {
        BranchPolicy::Mask(sample_branch_mask(model.num_blocks(), p_skip, rng))
    } else {
        BranchPolicy::Scaled(1.0)
    }
}

/// Validation PSNR on the held-out pairs (Y channel, `scale` border crop).
pub fn validate(model: &Model<f32>, val: &[LoadedPair]) -> Result<f64> {
    let protocol = EvalProtocol::standard(model.config().scale, false);
    Ok(evaluate_pairs(model, val, protocol)?.aggregate.psnr_db)
}

/// Runs one training stage from `model`, extending the provenance of `prior`.
/// Optimizer state and schedule always start fresh.
pub fn run_stage(
    model: Model<f32>,
    data: &TrainData,
    cfg: &TrainConfig,
    opts: &StageOptions,
    prior: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model;
    if model.config().scale != data.scale {
        return Err(Error::config(
            "scale",
            format!("model scale {} does not match data scale {}", model.config().scale, data.scale),
        ));
    }
    model.set_stochastic_depth(cfg.stochastic_depth_p)?;
    let stage_index = prior.map_or(0, |c| c.stages.len()) as u64;
    let mut sampler = cfg.resolved_sampler();
    sampler.seed = cfg.seed ^ (stage_index << 48);
    let mut stream = make_batch_stream(
        Arc::clone(&data.train),
        &sampler,
        cfg.batch_size,
        StreamOptions {
            workers: cfg.workers,
            ..StreamOptions::default()
        },
    )?;
    let mut rng: SrRng = derived(cfg.seed, TRAINER_STREAM + stage_index);
    let schedule = cfg.resolved_schedule();
    let hyper = cfg.hyper();
    let mut state = OptimizerState::for_model(&model);
    let mut precision = PrecisionPolicy::new(cfg.precision);

    let base_iter = prior.map_or(0, |c| c.iteration);
    let mut stages = prior.map_or_else(Vec::new, |c| c.stages.clone());
    let mut history = prior.map_or_else(Vec::new, |c| c.history.clone());
    let mut losses = Vec::with_capacity(cfg.total_iters as usize);
    let mut window = (0.0f64, 0u64);
    let mut last_psnr: Option<f64> = None;
    let mut flat_windows = 0usize;
    let mut stopped_early = false;
    let mut ran = 0u64;

    for t in 0..cfg.total_iters {
        if let Some((at, name)) = &opts.faults.param_inf_at {
            if *at == t {
                let p = model
                    .param_mut(name)
                    .ok_or_else(|| Error::config("param_inf_at", format!("no parameter `{name}`")))?;
                p.tensor.data_mut()[0] = f32::INFINITY;
            }
        }
        let lr_t = schedule.lr_at(t, cfg.lr)?;
        let batch = stream.next_batch()?;
        let policy = train_policy(&model, cfg.stochastic_depth_p, &mut rng);
        let compute = precision.compute_model(&model);
        let x = precision.compute_input(&batch.lr);
        let (pred, tape) = compute.forward_recorded(&x, &policy)?;
        let mut loss = l1_loss(&pred, &batch.hr)?;
        if opts.faults.nonfinite_loss_at == Some(t) {
            loss = f64::NAN;
        }
        nan_guard(loss, &model, t, cfg.seed, lr_t)?;
        let dout = l1_grad(&pred, &batch.hr, precision.loss_scale())?;
        let mut grads = compute.backward(&tape, &dout, opts.trainable)?;
        drop(compute);
        if opts.faults.grad_overflow_at == Some(t) {
            if let Some(g) = grads.tensors.iter_mut().find(|g| !g.is_empty()) {
                g.data_mut()[0] = f32::INFINITY;
            }
        }
        if precision.process_gradients(&mut grads) == StepAction::Apply {
            step_model(&mut model, &grads, &mut state, &hyper, lr_t, opts.trainable)?;
        }
        nan_guard(loss, &model, t, cfg.seed, lr_t)?;
        losses.push(loss);
        window.0 += loss;
        window.1 += 1;
        ran = t + 1;

        if opts.log_every > 0 && ran % opts.log_every == 0 {
            eprintln!("[{}] iter {ran}/{} loss {loss:.5} lr {lr_t:.3e}", opts.stage, cfg.total_iters);
        }
        let eval_now = (cfg.eval_every > 0 && ran % cfg.eval_every == 0) || ran == cfg.total_iters;
        if eval_now && !data.val.is_empty() {
            let psnr = validate(&model, &data.val)?;
            history.push(HistoryEntry {
                stage: opts.stage.clone(),
                iteration: base_iter + ran,
                val_psnr: psnr,
                train_l1: window.0 / window.1.max(1) as f64,
            });
            window = (0.0, 0);
            if let (Some(rule), Some(prev)) = (opts.plateau, last_psnr) {
                if psnr - prev < rule.min_delta_db {
                    flat_windows += 1;
                } else {
                    flat_windows = 0;
                }
                if flat_windows >= rule.patience && ran < cfg.total_iters {
                    stopped_early = true;
                }
            }
            last_psnr = Some(psnr);
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if opts.checkpoint_every > 0 && ran % opts.checkpoint_every == 0 && ran < cfg.total_iters {
                let snap = snapshot(&model, &state, &precision, &rng, base_iter + ran, &stages, &history, cfg, opts, ran);
                save_checkpoint(&snap, &dir.join(format!("{}_{}.ckpt", opts.stage, base_iter + ran)))?;
            }
        }
        if stopped_early {
            break;
        }
    }

    stages.push(StageRecord {
        name: opts.stage.clone(),
        iters: ran,
    });
    let checkpoint = Checkpoint {
        model,
        optimizer: Some(state),
        iteration: base_iter + ran,
        stages,
        history,
        rng: RngSnapshot::capture(&rng),
        loss_scale: (cfg.precision == Precision::Fp16Mixed).then_some(precision.scaler),
        config: serde_json::to_value(cfg).expect("config serialises"),
        init_scheme: prior.map_or_else(|| crate::model::INIT_SCHEME.to_string(), |c| c.init_scheme.clone()),
    };
    Ok(TrainOutcome {
        checkpoint,
        losses,
        stopped_early,
    })
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    model: &Model<f32>,
    state: &OptimizerState<f32>,
    precision: &PrecisionPolicy,
    rng: &SrRng,
    iteration: u64,
    stages: &[StageRecord],
    history: &[HistoryEntry],
    cfg: &TrainConfig,
    opts: &StageOptions,
    ran: u64,
) -> Checkpoint {
    let mut stages = stages.to_vec();
    stages.push(StageRecord {
        name: opts.stage.clone(),
        iters: ran,
    });
    Checkpoint {
        model: model.clone(),
        optimizer: Some(state.clone()),
        iteration,
        stages,
        history: history.to_vec(),
        rng: RngSnapshot::capture(rng),
        loss_scale: (cfg.precision == Precision::Fp16Mixed).then_some(precision.scaler),
        config: serde_json::to_value(cfg).expect("config serialises"),
        init_scheme: crate::model::INIT_SCHEME.to_string(),
    }
}

/// Trains `model` on `index` for `cfg.total_iters` steps as stage "train".
pub fn train(model: Model<f32>, index: &DatasetIndex, cfg: &TrainConfig) -> Result<Checkpoint> {
    let data = TrainData::from_index(index, cfg.val_count, cfg.val_crop)?;
    Ok(run_stage(model, &data, cfg, &StageOptions::new("train"), None)?.checkpoint)
}
