//! Command implementations and exit-code mapping.

use std::path::{Path, PathBuf};

use rcan_core::config::{format_plan, MeanShift, Preset, RunConfig};
use rcan_core::data::{prepare_data, scan_dataset, DatasetIndex, DatasetMeta, LoadedPair, TrainingSet};
use rcan_core::metrics::{evaluate_benchmark, evaluate_pairs, infer_image, YConversion};
use rcan_core::rng::seeded;
use rcan_core::trainer::{
    check_warm_start, finetune_large_patch, load_checkpoint, run_stage, save_checkpoint, warm_start, Checkpoint,
    Plateau, StageOptions, TrainData, WarmStartPlan, STAGE_TRAIN,
};
use rcan_core::{build_model, synth, Error, Model};

use crate::{Command, ConfigArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config { .. }) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` is not a directory", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Preset, then config file, then `--data`/`--out`, then `--set` overrides.
fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    let file_text = match &args.config {
        Some(p) => {
            require_file(p, "config file")?;
            Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
        }
        None => None,
    };
    let mut cfg = match (&args.preset, &file_text) {
        (Some(name), _) => {
            RunConfig::preset(Preset::parse(name).ok_or_else(|| usage(format!("unknown preset `{name}`")))?)
        }
        (None, Some(text)) => RunConfig::parse(text)?,
        (None, None) => RunConfig::default(),
    };
    if let (Some(_), Some(text)) = (&args.preset, &file_text) {
        let from_file = RunConfig::parse(text)?;
        let preset = cfg.preset;
        // apply only the keys the file actually sets
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some((k, _)) = line.split_once('=') {
                let k = k.trim();
                if k != "preset" {
                    cfg.set(k, &from_file.get(k).expect("parsed key"))?;
                }
            }
        }
        cfg.preset = preset;
    }
    if let Some(d) = &args.data {
        cfg.data_root = Some(d.clone());
    }
    if let Some(o) = &args.out {
        cfg.out_dir = Some(o.clone());
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("`--set {kv}` must look like key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_resolved(cfg: &RunConfig, plan: &str) {
    print!("{}", cfg.to_text());
    print!("{plan}");
}

fn dirs(cfg: &RunConfig) -> CliResult<(PathBuf, PathBuf)> {
    let data = cfg.data_root.clone().ok_or_else(|| usage("no data root: pass --data or set data_root"))?;
    let out = cfg.out_dir.clone().ok_or_else(|| usage("no output directory: pass --out or set out_dir"))?;
    require_dir(&data, "data root")?;
    Ok((data, out))
}

fn load_data(cfg: &RunConfig, root: &Path) -> CliResult<(DatasetIndex, TrainData)> {
    let index = scan_dataset(root, cfg.scale)?;
    let data = TrainData::from_index(&index, cfg.val_count, cfg.val_crop)?;
    Ok((index, data))
}

fn dataset_mean(cfg: &RunConfig, root: &Path, data: &TrainData) -> Option<[f64; 3]> {
    match cfg.mean_shift {
        MeanShift::Dataset => Some(DatasetMeta::load(root).map(|m| m.mean_rgb).unwrap_or_else(|_| data.train.mean_rgb())),
        _ => None,
    }
}

fn stage_options(cfg: &RunConfig, stage: &str, out: &Path) -> StageOptions {
    StageOptions {
        checkpoint_dir: Some(out.to_path_buf()),
        checkpoint_every: cfg.checkpoint_every,
        log_every: cfg.log_every,
        ..StageOptions::new(stage)
    }
}

fn finish_run(ckpt: &Checkpoint, out: &Path) -> CliResult {
    save_checkpoint(ckpt, &out.join("final.ckpt"))?;
    let history = serde_json::to_string_pretty(&ckpt.history).expect("history serialises");
    write_text(&out.join("history.json"), &(history + "\n"))?;
    println!(
        "finished: {} iterations over stages [{}]",
        ckpt.iteration,
        ckpt.stages
            .iter()
            .map(|s| format!("{}={}", s.name, s.iters))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if let Some(h) = ckpt.history.last() {
        println!("final validation PSNR {:.4} dB", h.val_psnr);
    }
    Ok(())
}

fn cmd_train(args: &ConfigArgs, dry_run: bool) -> CliResult {
    let cfg = resolve(args)?;
    if dry_run {
        print_resolved(&cfg, &format_plan(&cfg.train_plan()));
        return Ok(());
    }
    let (root, out) = dirs(&cfg)?;
    let (_, data) = load_data(&cfg, &root)?;
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    let model_cfg = cfg.model_config(dataset_mean(&cfg, &root, &data))?;
    let model: Model<f32> = build_model(&model_cfg, &mut seeded(cfg.seed))?;
    let train_cfg = cfg.train_config();
    let trained = run_stage(model, &data, &train_cfg, &stage_options(&cfg, STAGE_TRAIN, &out), None)?.checkpoint;
    save_checkpoint(&trained, &out.join(format!("{STAGE_TRAIN}.ckpt")))?;
    let final_ckpt = if cfg.finetune_iters > 0 {
        let ft = finetune_large_patch(
            &trained,
            &data,
            &train_cfg,
            cfg.finetune_patch,
            cfg.finetune_iters,
            cfg.finetune_batch,
        )?;
        save_checkpoint(&ft, &out.join("large_patch.ckpt"))?;
        ft
    } else {
        trained
    };
    finish_run(&final_ckpt, &out)
}

fn cmd_warm_start(from: Option<&Path>, scale: usize, args: &ConfigArgs, dry_run: bool) -> CliResult {
    let mut cfg = resolve(args)?;
    cfg.set("scale", &scale.to_string())?;
    cfg.validate()?;
    let source = match from {
        Some(p) => {
            require_file(p, "source checkpoint")?;
            let c = load_checkpoint(p)?;
            check_warm_start(c.model.config().scale, scale)?;
            Some(c)
        }
        None => {
            check_warm_start(2, scale)?;
            None
        }
    };
    if dry_run {
        print_resolved(&cfg, &format_plan(&cfg.warm_start_plan()));
        return Ok(());
    }
    let source = source.ok_or_else(|| usage("--from is required unless --dry-run is given"))?;
    let (root, out) = dirs(&cfg)?;
    let (_, data) = load_data(&cfg, &root)?;
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    let plan = WarmStartPlan {
        target_scale: scale,
        tail_iters: cfg.warm_tail_iters,
        full_iters: cfg.resolved_warm_full_iters(),
        plateau: Some(Plateau::default()),
    };
    let base = stage_options(&cfg, "", &out);
    let outcome = warm_start(&source, &data, &cfg.train_config(), &plan, &base)?;
    save_checkpoint(&outcome.tail.checkpoint, &out.join("warm_tail.ckpt"))?;
    save_checkpoint(outcome.checkpoint(), &out.join("warm_full.ckpt"))?;
    finish_run(outcome.checkpoint(), &out)
}

struct EvalArgs<'a> {
    ckpt: &'a Path,
    benchmark: &'a Path,
    ensemble: bool,
    json: Option<&'a Path>,
    out: &'a Path,
    crop_border: Option<usize>,
    y_conversion: &'a str,
    no_quantize: bool,
    dry_run: bool,
}

fn cmd_eval(a: EvalArgs<'_>) -> CliResult {
    require_file(a.ckpt, "checkpoint")?;
    require_dir(a.benchmark, "benchmark")?;
    let ckpt = load_checkpoint(a.ckpt)?;
    let mut cfg = RunConfig {
        preset: None,
        ..RunConfig::default()
    };
    cfg.scale = ckpt.model.config().scale;
    cfg.ensemble = a.ensemble;
    cfg.crop_border = a.crop_border;
    cfg.y_conversion = YConversion::parse(a.y_conversion)
        .ok_or_else(|| usage(format!("--y-conversion must be studio or full, got `{}`", a.y_conversion)))?;
    cfg.quantize = !a.no_quantize;
    cfg.data_root = Some(a.benchmark.to_path_buf());
    cfg.out_dir = Some(a.out.to_path_buf());
    let protocol = cfg.eval_protocol();
    let json_path = a.json.map_or_else(|| a.out.join("report.json"), Path::to_path_buf);
    if a.dry_run {
        print!("{}", cfg.to_text());
        println!("report = {}", json_path.display());
        return Ok(());
    }
    let report = evaluate_benchmark(&ckpt.model, a.benchmark, protocol)?;
    print!("{}", report.to_table());
    write_text(&json_path, &(report.to_json() + "\n"))?;
    write_text(&a.out.join("eval.cfg"), &cfg.to_text())?;
    Ok(())
}

fn cmd_infer(ckpt: &Path, input: &Path, out: &Path, ensemble: bool, tile: Option<usize>, dry_run: bool) -> CliResult {
    require_file(ckpt, "checkpoint")?;
    if !input.exists() {
        return Err(usage(format!("input `{}` does not exist", input.display())));
    }
    if tile == Some(0) {
        return Err(usage("--tile must be positive"));
    }
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        let mut v: Vec<_> = std::fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .map(|p| {
                let name = p.file_name().expect("file name").to_owned();
                (p, out.join(name))
            })
            .collect();
        v.sort();
        v
    } else {
        vec![(input.to_path_buf(), out.to_path_buf())]
    };
    let model = load_checkpoint(ckpt)?.model;
    if dry_run {
        println!("scale = {}", model.config().scale);
        println!("ensemble = {ensemble}");
        println!("tile = {}", tile.map_or_else(|| "none".into(), |t| t.to_string()));
        for (i, o) in &jobs {
            println!("{} -> {}", i.display(), o.display());
        }
        return Ok(());
    }
    for (i, o) in &jobs {
        let sr = infer_image(&model, i, o, ensemble, tile)?;
        println!("{} -> {} ({}x{})", i.display(), o.display(), sr.width(), sr.height());
    }
    Ok(())
}

fn cmd_oracle(ckpt_path: &Path, benchmark: &Path, args: &ConfigArgs, dry_run: bool) -> CliResult {
    require_file(ckpt_path, "checkpoint")?;
    require_dir(benchmark, "benchmark")?;
    let mut cfg = resolve(args)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    cfg.set("scale", &ckpt.model.config().scale.to_string())?;
    cfg.data_root = Some(benchmark.to_path_buf());
    if dry_run {
        let plan = "stage 1 oracle: train on the benchmark itself, stop on a 0.01 dB plateau over 2 evaluations\n";
        print_resolved(&cfg, plan);
        return Ok(());
    }
    let out = cfg.out_dir.clone().ok_or_else(|| usage("no output directory: pass --out or set out_dir"))?;
    let index = scan_dataset(benchmark, cfg.scale)?;
    let set = TrainingSet::load(&index)?;
    let val: Vec<LoadedPair> = set.pairs.clone();
    let data = TrainData::from_parts(set, val, cfg.val_crop)?;
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    let opts = StageOptions {
        plateau: Some(Plateau::default()),
        ..stage_options(&cfg, "oracle", &out)
    };
    let tuned = run_stage(ckpt.model.clone(), &data, &cfg.train_config(), &opts, Some(&ckpt))?.checkpoint;
    let report = evaluate_pairs(&tuned.model, &TrainingSet::load(&index)?.pairs, cfg.eval_protocol())?;
    print!("{}", report.to_table());
    write_text(&out.join("report.json"), &(report.to_json() + "\n"))?;
    finish_run(&tuned, &out)
}

fn cmd_prepare(root: &Path, scales: &[usize], dry_run: bool) -> CliResult {
    require_dir(root, "dataset root")?;
    require_dir(&root.join("HR"), "HR directory")?;
    for &s in scales {
        rcan_core::model::validate_scale(s)?;
    }
    if dry_run {
        println!("root = {}", root.display());
        println!(
            "scales = {}",
            scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
        );
        return Ok(());
    }
    let written = prepare_data(root, scales)?;
    println!("wrote {written} files");
    Ok(())
}

fn cmd_synth(root: &Path, count: usize, size: usize, seed: u64, dry_run: bool) -> CliResult {
    if size < 16 {
        return Err(usage("--size must be at least 16"));
    }
    if dry_run {
        println!("root = {}\ncount = {count}\nsize = {size}\nseed = {seed}", root.display());
        return Ok(());
    }
    synth::write_synthetic_dataset(root, count, size, size, seed)?;
    println!("wrote {count} images to {}", root.join("HR").display());
    Ok(())
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::PrepareData { root, scales, dry_run } => cmd_prepare(&root, &scales, dry_run),
        Command::Train { cfg, dry_run } => cmd_train(&cfg, dry_run),
        Command::WarmStart {
            from,
            scale,
            cfg,
            dry_run,
        } => cmd_warm_start(from.as_deref(), scale, &cfg, dry_run),
        Command::Eval {
            ckpt,
            benchmark,
            ensemble,
            json,
            out,
            crop_border,
            y_conversion,
            no_quantize,
            dry_run,
        } => cmd_eval(EvalArgs {
            ckpt: &ckpt,
            benchmark: &benchmark,
            ensemble,
            json: json.as_deref(),
            out: &out,
            crop_border,
            y_conversion: &y_conversion,
            no_quantize,
            dry_run,
        }),
        Command::Infer {
            ckpt,
            input,
            out,
            ensemble,
            tile,
            dry_run,
        } => cmd_infer(&ckpt, &input, &out, ensemble, tile, dry_run),
        Command::OracleFinetune {
            ckpt,
            benchmark,
            cfg,
            dry_run,
        } => cmd_oracle(&ckpt, &benchmark, &cfg, dry_run),
        Command::SynthData {
            root,
            count,
            size,
            seed,
            dry_run,
        } => cmd_synth(&root, count, size, seed, dry_run),
    }
}
