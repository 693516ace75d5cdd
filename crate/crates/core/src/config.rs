//! Flat `key = value` run configuration and the recipe presets.
//!
//! Every run writes its fully resolved configuration with [`RunConfig::to_text`];
//! [`RunConfig::parse`] reads it back to an identical value. Unknown keys are
//! rejected. `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{Rejection, SamplerConfig};
use crate::error::{Error, Result};
use crate::image::ColorSpace;
use crate::metrics::{EvalProtocol, YConversion};
use crate::model::ModelConfig;
use crate::nn::Activation;
use crate::optim::{OptimizerHyper, OptimizerKind, Precision, ScheduleConfig, ScheduleKind};
use crate::trainer::{default_full_iters, large_patch_batch, TrainConfig};

/// Where the model's input mean comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanShift {
    None,
    /// Mean RGB of the training images (`meta.json` when present).
    Dataset,
    Fixed([f64; 3]),
}

/// Named recipes. Each documents the row of the published recipe it encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Original RCAN recipe: batch 16, lr 1e-4, Adam (0.9, 0.99), halve every
    /// 20% of 1,725K iterations.
    Original,
    /// Large-batch baseline: batch 256, lr 0.0032, Lamb, cosine, 80K iterations.
    Baseline,
    /// Baseline trained twice as long: 160K iterations.
    Longer,
    /// Longer training with SiLU, then 40K iterations of 64x64-patch finetuning.
    RcanIt,
    /// Two-group, two-block, 16-channel network for CPU runs.
    Desk,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Original, Preset::Baseline, Preset::Longer, Preset::RcanIt, Preset::Desk];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Original => "original",
            Preset::Baseline => "baseline",
            Preset::Longer => "longer",
            Preset::RcanIt => "rcan-it",
            Preset::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Original => "BS 16, lr 1e-4, Adam(0.9, 0.99), multistep halving every 20%, 1725K iters",
            Preset::Baseline => "BS 256, lr 0.0032, Lamb, cosine, 80K iters",
            Preset::Longer => "baseline with 160K iters",
            Preset::RcanIt => "longer + SiLU, then 40K iters of 64x64 patches at BS 144",
            Preset::Desk => "RCAN-tiny (2x2 blocks, 16 feats), BS 8, Lamb 4e-3, cosine, 2K iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    // model
    pub scale: usize,
    pub n_groups: usize,
    pub n_blocks: usize,
    pub n_feats: usize,
    pub reduction: usize,
    pub activation: Activation,
    pub mean_shift: MeanShift,
    pub res_scale: f64,
    // training
    pub batch_size: usize,
    pub lr: f64,
    pub total_iters: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub eta_min: f64,
    pub warmup_iters: u64,
    pub patch_size: usize,
    pub precision: Precision,
    pub stochastic_depth_p: f64,
    pub eval_every: u64,
    pub seed: u64,
    pub workers: usize,
    pub val_count: usize,
    pub val_crop: Option<usize>,
    pub grad_clip: Option<f64>,
    // sampler
    pub geo_aug: bool,
    pub color_aug: bool,
    pub mixup_alpha: Option<f64>,
    pub rejection: bool,
    pub rejection_threshold_db: f64,
    pub reject_prob: f64,
    // pipeline
    pub finetune_iters: u64,
    pub finetune_patch: usize,
    pub finetune_batch: Option<usize>,
    pub warm_base_iters: u64,
    pub warm_tail_iters: u64,
    pub warm_full_iters: Option<u64>,
    // evaluation
    pub ensemble: bool,
    pub crop_border: Option<usize>,
    pub y_conversion: YConversion,
    pub quantize: bool,
    // outputs
    pub data_root: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

/// Every accepted key with a one-line description, in output order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "recipe the values started from"),
    ("scale", "upscaling factor: 2, 3 or 4"),
    ("n_groups", "residual groups"),
    ("n_blocks", "residual blocks per group"),
    ("n_feats", "feature channels"),
    ("reduction", "channel-attention reduction ratio"),
    ("activation", "relu | silu"),
    ("mean_shift", "none | dataset | r,g,b"),
    ("res_scale", "residual branch multiplier"),
    ("batch_size", "images per step"),
    ("lr", "peak learning rate"),
    ("total_iters", "training iterations"),
    ("optimizer", "adam | lamb"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    ("eps", "optimizer epsilon"),
    ("weight_decay", "decoupled weight decay (Lamb: inside the trust ratio)"),
    ("schedule", "cosine | multistep"),
    ("eta_min", "cosine floor"),
    ("warmup_iters", "linear warmup length"),
    ("patch_size", "LR training patch side"),
    ("precision", "fp32 | fp16_mixed"),
    ("stochastic_depth_p", "residual block drop probability"),
    ("eval_every", "validation period in iterations"),
    ("seed", "random seed"),
    ("workers", "data workers"),
    ("val_count", "trailing files held out for validation"),
    ("val_crop", "centred HR crop for validation images, or none"),
    ("grad_clip", "not supported; must be none"),
    ("geo_aug", "random flips and transpose"),
    ("color_aug", "random inversion and channel shuffle"),
    ("mixup_alpha", "Beta(a, a) mixup, or none"),
    ("rejection", "reject easy patches"),
    ("rejection_threshold_db", "bicubic PSNR at or above which patches may be rejected"),
    ("reject_prob", "rejection probability"),
    ("finetune_iters", "large-patch finetuning iterations after training"),
    ("finetune_patch", "large-patch LR patch side"),
    ("finetune_batch", "large-patch batch size, or none for the pixel-preserving default"),
    ("warm_base_iters", "longer-training budget the warm-start budget derives from"),
    ("warm_tail_iters", "cap on tail-only warm-start iterations"),
    ("warm_full_iters", "full-model warm-start iterations, or none for half of warm_base_iters"),
    ("ensemble", "eight-way self-ensemble at evaluation"),
    ("crop_border", "evaluation border crop, or none for the scale"),
    ("y_conversion", "studio | full"),
    ("quantize", "round SR output to 8 bits before scoring"),
    ("data_root", "training data root"),
    ("out_dir", "output directory"),
    ("checkpoint_every", "periodic checkpoint interval (0 = final only)"),
    ("log_every", "progress line interval (0 = silent)"),
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Baseline)
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::config(key, format!("`{value}` is not {expected}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, v, "a boolean")),
    }
}

fn parse_opt<T>(v: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn show_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = RunConfig {
            preset: Some(p),
            scale: 2,
            n_groups: 10,
            n_blocks: 20,
            n_feats: 64,
            reduction: 16,
            activation: Activation::Relu,
            mean_shift: MeanShift::Dataset,
            res_scale: 1.0,
            batch_size: 256,
            lr: 0.0032,
            total_iters: 80_000,
            optimizer: OptimizerKind::Lamb,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
            schedule: ScheduleKind::Cosine,
            eta_min: 0.0,
            warmup_iters: 0,
            patch_size: 48,
            precision: Precision::Fp32,
            stochastic_depth_p: 0.0,
            eval_every: 1000,
            seed: 0,
            workers: 1,
            val_count: 10,
            val_crop: None,
            grad_clip: None,
            geo_aug: true,
            color_aug: false,
            mixup_alpha: None,
            rejection: false,
            rejection_threshold_db: 24.0,
            reject_prob: 0.8,
            finetune_iters: 0,
            finetune_patch: 64,
            finetune_batch: None,
            warm_base_iters: 160_000,
            warm_tail_iters: 10_000,
            warm_full_iters: None,
            ensemble: false,
            crop_border: None,
            y_conversion: YConversion::Studio,
            quantize: true,
            data_root: None,
            out_dir: None,
            checkpoint_every: 0,
            log_every: 100,
        };
        match p {
            Preset::Baseline => {}
            Preset::Original => {
                c.batch_size = 16;
                c.lr = 1e-4;
                c.total_iters = 1_725_000;
                c.optimizer = OptimizerKind::Adam;
                c.beta2 = 0.99;
                c.eps = 1e-8;
                c.schedule = ScheduleKind::Multistep;
            }
            Preset::Longer => c.total_iters = 160_000,
            Preset::RcanIt => {
                c.total_iters = 160_000;
                c.activation = Activation::Silu;
                c.finetune_iters = 40_000;
                c.finetune_patch = 64;
                c.finetune_batch = Some(large_patch_batch(256, 48, 64));
            }
            Preset::Desk => {
                c.n_groups = 2;
                c.n_blocks = 2;
                c.n_feats = 16;
                c.reduction = 4;
                c.batch_size = 8;
                c.lr = 4e-3;
                c.total_iters = 2000;
                c.patch_size = 16;
                c.eval_every = 200;
                c.val_count = 4;
                c.val_crop = Some(64);
                c.warm_base_iters = 2000;
                c.warm_tail_iters = 500;
                c.finetune_patch = 24;
            }
        }
        c
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "preset" => {
                self.preset = parse_opt(v, |s| Preset::parse(s).ok_or_else(|| bad(key, s, "a preset")))?
            }
            "scale" => self.scale = parse_num(key, v, "an integer")?,
            "n_groups" => self.n_groups = parse_num(key, v, "an integer")?,
            "n_blocks" => self.n_blocks = parse_num(key, v, "an integer")?,
            "n_feats" => self.n_feats = parse_num(key, v, "an integer")?,
            "reduction" => self.reduction = parse_num(key, v, "an integer")?,
            "activation" => self.activation = Activation::parse(v).ok_or_else(|| bad(key, v, "relu or silu"))?,
            "mean_shift" => {
                self.mean_shift = match v {
                    "none" => MeanShift::None,
                    "dataset" => MeanShift::Dataset,
                    triple => {
                        let parts: Vec<f64> = triple
                            .split(',')
                            .map(|p| parse_num(key, p.trim(), "a number"))
                            .collect::<Result<_>>()?;
                        let arr: [f64; 3] = parts.try_into().map_err(|_| bad(key, v, "none, dataset or r,g,b"))?;
                        MeanShift::Fixed(arr)
                    }
                }
            }
            "res_scale" => self.res_scale = parse_num(key, v, "a number")?,
            "batch_size" => self.batch_size = parse_num(key, v, "an integer")?,
            "lr" => self.lr = parse_num(key, v, "a number")?,
            "total_iters" => self.total_iters = parse_num(key, v, "an integer")?,
            "optimizer" => self.optimizer = OptimizerKind::parse(v).ok_or_else(|| bad(key, v, "adam or lamb"))?,
            "beta1" => self.beta1 = parse_num(key, v, "a number")?,
            "beta2" => self.beta2 = parse_num(key, v, "a number")?,
            "eps" => self.eps = parse_num(key, v, "a number")?,
            "weight_decay" => self.weight_decay = parse_num(key, v, "a number")?,
            "schedule" => self.schedule = ScheduleKind::parse(v).ok_or_else(|| bad(key, v, "cosine or multistep"))?,
            "eta_min" => self.eta_min = parse_num(key, v, "a number")?,
            "warmup_iters" => self.warmup_iters = parse_num(key, v, "an integer")?,
            "patch_size" => self.patch_size = parse_num(key, v, "an integer")?,
            "precision" => self.precision = Precision::parse(v).ok_or_else(|| bad(key, v, "fp32 or fp16_mixed"))?,
            "stochastic_depth_p" => self.stochastic_depth_p = parse_num(key, v, "a number")?,
            "eval_every" => self.eval_every = parse_num(key, v, "an integer")?,
            "seed" => self.seed = parse_num(key, v, "an integer")?,
            "workers" => self.workers = parse_num(key, v, "an integer")?,
            "val_count" => self.val_count = parse_num(key, v, "an integer")?,
            "val_crop" => self.val_crop = parse_opt(v, |s| parse_num(key, s, "an integer"))?,
            "grad_clip" => self.grad_clip = parse_opt(v, |s| parse_num(key, s, "a number"))?,
            "geo_aug" => self.geo_aug = parse_bool(key, v)?,
            "color_aug" => self.color_aug = parse_bool(key, v)?,
            "mixup_alpha" => self.mixup_alpha = parse_opt(v, |s| parse_num(key, s, "a number"))?,
            "rejection" => self.rejection = parse_bool(key, v)?,
            "rejection_threshold_db" => self.rejection_threshold_db = parse_num(key, v, "a number")?,
            "reject_prob" => self.reject_prob = parse_num(key, v, "a number")?,
            "finetune_iters" => self.finetune_iters = parse_num(key, v, "an integer")?,
            "finetune_patch" => self.finetune_patch = parse_num(key, v, "an integer")?,
            "finetune_batch" => self.finetune_batch = parse_opt(v, |s| parse_num(key, s, "an integer"))?,
            "warm_base_iters" => self.warm_base_iters = parse_num(key, v, "an integer")?,
            "warm_tail_iters" => self.warm_tail_iters = parse_num(key, v, "an integer")?,
            "warm_full_iters" => self.warm_full_iters = parse_opt(v, |s| parse_num(key, s, "an integer"))?,
            "ensemble" => self.ensemble = parse_bool(key, v)?,
            "crop_border" => self.crop_border = parse_opt(v, |s| parse_num(key, s, "an integer"))?,
            "y_conversion" => self.y_conversion = YConversion::parse(v).ok_or_else(|| bad(key, v, "studio or full"))?,
            "quantize" => self.quantize = parse_bool(key, v)?,
            "data_root" => self.data_root = parse_opt(v, |s| Ok(PathBuf::from(s)))?,
            "out_dir" => self.out_dir = parse_opt(v, |s| Ok(PathBuf::from(s)))?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v, "an integer")?,
            "log_every" => self.log_every = parse_num(key, v, "an integer")?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Textual value of `key` in the form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "preset" => self.preset.map_or_else(|| "none".into(), |p| p.name().into()),
            "scale" => self.scale.to_string(),
            "n_groups" => self.n_groups.to_string(),
            "n_blocks" => self.n_blocks.to_string(),
            "n_feats" => self.n_feats.to_string(),
            "reduction" => self.reduction.to_string(),
            "activation" => self.activation.name().into(),
            "mean_shift" => match self.mean_shift {
                MeanShift::None => "none".into(),
                MeanShift::Dataset => "dataset".into(),
                MeanShift::Fixed([r, g, b]) => format!("{r},{g},{b}"),
            },
            "res_scale" => self.res_scale.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "total_iters" => self.total_iters.to_string(),
            "optimizer" => self.optimizer.name().into(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "schedule" => self.schedule.name().into(),
            "eta_min" => self.eta_min.to_string(),
            "warmup_iters" => self.warmup_iters.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "precision" => self.precision.name().into(),
            "stochastic_depth_p" => self.stochastic_depth_p.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "seed" => self.seed.to_string(),
            "workers" => self.workers.to_string(),
            "val_count" => self.val_count.to_string(),
            "val_crop" => show_opt(&self.val_crop),
            "grad_clip" => show_opt(&self.grad_clip),
            "geo_aug" => self.geo_aug.to_string(),
            "color_aug" => self.color_aug.to_string(),
            "mixup_alpha" => show_opt(&self.mixup_alpha),
            "rejection" => self.rejection.to_string(),
            "rejection_threshold_db" => self.rejection_threshold_db.to_string(),
            "reject_prob" => self.reject_prob.to_string(),
            "finetune_iters" => self.finetune_iters.to_string(),
            "finetune_patch" => self.finetune_patch.to_string(),
            "finetune_batch" => show_opt(&self.finetune_batch),
            "warm_base_iters" => self.warm_base_iters.to_string(),
            "warm_tail_iters" => self.warm_tail_iters.to_string(),
            "warm_full_iters" => show_opt(&self.warm_full_iters),
            "ensemble" => self.ensemble.to_string(),
            "crop_border" => show_opt(&self.crop_border),
            "y_conversion" => self.y_conversion.name().into(),
            "quantize" => self.quantize.to_string(),
            "data_root" => show_opt(&self.data_root.as_ref().map(|p| p.display())),
            "out_dir" => show_opt(&self.out_dir.as_ref().map(|p| p.display())),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "log_every" => self.log_every.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses `key = value` lines. A `preset` line, wherever it appears, is
    /// applied first and the remaining keys override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) if v != "none" => {
                RunConfig::preset(Preset::parse(v).ok_or_else(|| bad("preset", v, "a preset"))?)
            }
            _ => RunConfig::default(),
        };
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(None)?.validate()?;
        self.train_config().validate()?;
        for (key, v) in [("finetune_patch", self.finetune_patch)] {
            if v < 8 {
                return Err(Error::config(key, "must be at least 8"));
            }
        }
        if self.finetune_batch == Some(0) {
            return Err(Error::config("finetune_batch", "must be at least 1"));
        }
        Ok(())
    }

    /// Network configuration; `dataset_mean` resolves `mean_shift = dataset`.
    pub fn model_config(&self, dataset_mean: Option<[f64; 3]>) -> Result<ModelConfig> {
        let mean_shift = match self.mean_shift {
            MeanShift::None => None,
            MeanShift::Dataset => dataset_mean,
            MeanShift::Fixed(m) => Some(m),
        };
        Ok(ModelConfig {
            scale: self.scale,
            n_groups: self.n_groups,
            n_blocks: self.n_blocks,
            n_feats: self.n_feats,
            reduction: self.reduction,
            activation: self.activation,
            in_channels: 3,
            mean_shift,
            res_scale: self.res_scale,
            stochastic_depth_p: self.stochastic_depth_p,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            total_iters: self.total_iters,
            optimizer: OptimizerHyper {
                kind: self.optimizer,
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            schedule: ScheduleConfig {
                kind: self.schedule,
                total_iters: self.total_iters,
                eta_min: self.eta_min,
                warmup_iters: self.warmup_iters,
            },
            patch_size: self.patch_size,
            precision: self.precision,
            sampler: SamplerConfig {
                patch_size: self.patch_size,
                geo_aug: self.geo_aug,
                color_aug: self.color_aug,
                mixup_alpha: self.mixup_alpha,
                rejection: self.rejection.then_some(Rejection {
                    threshold_db: self.rejection_threshold_db,
                    reject_prob: self.reject_prob,
                }),
                seed: self.seed,
            },
            stochastic_depth_p: self.stochastic_depth_p,
            eval_every: self.eval_every,
            seed: self.seed,
            workers: self.workers,
            val_count: self.val_count,
            val_crop: self.val_crop,
            grad_clip: self.grad_clip,
        }
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        EvalProtocol {
            colorspace: ColorSpace::Y,
            y_conversion: self.y_conversion,
            crop_border: self.crop_border.unwrap_or(self.scale),
            ensemble: self.ensemble,
            scale: self.scale,
            quantize: self.quantize,
        }
    }

    pub fn resolved_warm_full_iters(&self) -> u64 {
        self.warm_full_iters.unwrap_or_else(|| default_full_iters(self.warm_base_iters))
    }

    fn schedule_desc(&self, iters: u64) -> String {
        match self.schedule {
            ScheduleKind::Cosine => "cosine".into(),
            ScheduleKind::Multistep => {
                let drops: Vec<String> = (1..5u64).map(|k| (k * iters).div_ceil(5).to_string()).collect();
                format!("multistep(halve_at={})", drops.join(","))
            }
        }
    }

    /// Stages `train` runs, in order.
    pub fn train_plan(&self) -> Vec<StagePlan> {
        let mut plan = vec![StagePlan {
            name: "train".into(),
            iters: self.total_iters,
            patch_size: self.patch_size,
            batch_size: self.batch_size,
            lr: self.lr,
            trainable: "all".into(),
            schedule: self.schedule_desc(self.total_iters),
        }];
        if self.finetune_iters > 0 {
            plan.push(StagePlan {
                name: "large_patch".into(),
                iters: self.finetune_iters,
                patch_size: self.finetune_patch,
                batch_size: self
                    .finetune_batch
                    .unwrap_or_else(|| large_patch_batch(self.batch_size, self.patch_size, self.finetune_patch)),
                lr: self.lr,
                trainable: "all".into(),
                schedule: self.schedule_desc(self.finetune_iters),
            });
        }
        plan
    }

    /// Stages `warm-start` runs, in order.
    pub fn warm_start_plan(&self) -> Vec<StagePlan> {
        vec![
            StagePlan {
                name: "warm_tail".into(),
                iters: self.warm_tail_iters,
                patch_size: self.patch_size,
                batch_size: self.batch_size,
                lr: self.lr,
                trainable: "tail".into(),
                schedule: self.schedule_desc(self.warm_tail_iters),
            },
            StagePlan {
                name: "warm_full".into(),
                iters: self.resolved_warm_full_iters(),
                patch_size: self.patch_size,
                batch_size: self.batch_size,
                lr: self.lr,
                trainable: "all".into(),
                schedule: self.schedule_desc(self.resolved_warm_full_iters()),
            },
        ]
    }
}

/// One planned stage, as printed by dry runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub name: String,
    pub iters: u64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub trainable: String,
    pub schedule: String,
}

/// Human-readable plan with the iteration total.
pub fn format_plan(plan: &[StagePlan]) -> String {
    let mut out = String::new();
    for (i, s) in plan.iter().enumerate() {
        let _ = writeln!(
            out,
            "stage {} {}: iters={} patch={} batch={} lr={} trainable={} schedule={}",
            i + 1,
            s.name,
            s.iters,
            s.patch_size,
            s.batch_size,
            s.lr,
            s.trainable,
            s.schedule
        );
    }
    let _ = writeln!(out, "total_iters_all_stages = {}", plan.iter().map(|s| s.iters).sum::<u64>());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_encode_the_recipes() {
        let o = RunConfig::preset(Preset::Original);
        assert_eq!((o.batch_size, o.lr, o.total_iters), (16, 1e-4, 1_725_000));
        assert_eq!((o.optimizer, o.beta1, o.beta2, o.schedule), (OptimizerKind::Adam, 0.9, 0.99, ScheduleKind::Multistep));
        let b = RunConfig::preset(Preset::Baseline);
        assert_eq!((b.batch_size, b.lr, b.total_iters, b.optimizer), (256, 0.0032, 80_000, OptimizerKind::Lamb));
        assert_eq!(RunConfig::preset(Preset::Longer).total_iters, 160_000);
        let r = RunConfig::preset(Preset::RcanIt);
        assert_eq!(r.activation, Activation::Silu);
        let plan = r.train_plan();
        assert_eq!(plan.iter().map(|s| s.iters).collect::<Vec<_>>(), vec![160_000, 40_000]);
        assert_eq!((plan[1].patch_size, plan[1].batch_size), (64, 144));
        for p in Preset::ALL {
            RunConfig::preset(p).validate().unwrap();
        }
    }

    #[test]
    fn text_round_trip() {
        for p in Preset::ALL {
            let mut c = RunConfig::preset(p);
            c.mean_shift = MeanShift::Fixed([0.4488, 0.4371, 0.404]);
            c.lr = 0.1 + 0.2;
            c.out_dir = Some("runs/x".into());
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::Config { field, .. }) if field == "colour"));
        assert!(RunConfig::parse("lr = fast").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        let c = RunConfig::parse("total_iters = 5\npreset = original  # applied first\n").unwrap();
        assert_eq!((c.total_iters, c.batch_size), (5, 16));
    }

    #[test]
    fn warm_full_defaults_to_half_of_base() {
        let c = RunConfig::preset(Preset::Longer);
        assert_eq!(c.warm_start_plan()[1].iters, 80_000);
    }

    #[test]
    fn every_key_is_settable_and_listed_once() {
        let c = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (k, _) in KEYS {
            assert!(seen.insert(*k));
            let v = c.get(k).unwrap();
            let mut d = c.clone();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }
}
