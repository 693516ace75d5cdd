//! `rcan`: data preparation, training, warm start, evaluation and inference.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const PRESET_HELP: &str = "\
Recipe preset. Presets:
  original  BS 16, lr 1e-4, Adam(0.9, 0.99), multistep halving every 20%, 1725K iters
  baseline  BS 256, lr 0.0032, Lamb, cosine, 80K iters
  longer    baseline with 160K iters
  rcan-it   longer + SiLU, then 40K iters of 64x64 patches at BS 144
  desk      RCAN-tiny (2x2 blocks, 16 feats), BS 8, Lamb 4e-3, cosine, 2K iters";

#[derive(Parser, Debug)]
#[command(name = "rcan", version, about = "Train and evaluate RCAN super-resolution models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the commands that resolve a run configuration.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, long_help = PRESET_HELP)]
    preset: Option<String>,
    /// Override one key, e.g. `--set total_iters=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training data root (`HR/`, optional `LR_bicubic/X{s}/`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate LR_bicubic trees and meta.json for a dataset root.
    PrepareData {
        #[arg(long)]
        root: PathBuf,
        /// Comma-separated scales.
        #[arg(long, default_value = "2,3,4", value_delimiter = ',')]
        scales: Vec<usize>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Train from scratch, followed by large-patch finetuning when configured.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dry_run: bool,
    },
    /// Start a x3/x4 model from a x2 checkpoint: tail only, then everything.
    WarmStart {
        /// Source x2 checkpoint.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Target scale (3 or 4).
        #[arg(long)]
        scale: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dry_run: bool,
    },
    /// Score a checkpoint on a benchmark directory; prints a table, writes JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        /// Average over the eight flips and rotations.
        #[arg(long)]
        ensemble: bool,
        /// Report path (default `<out>/report.json`).
        #[arg(long)]
        json: Option<PathBuf>,
        /// Directory for the report and resolved config.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Border pixels removed before scoring (default: the scale).
        #[arg(long)]
        crop_border: Option<usize>,
        /// `studio` or `full` luma.
        #[arg(long, default_value = "studio")]
        y_conversion: String,
        /// Score the unrounded output instead of the 8-bit one.
        #[arg(long)]
        no_quantize: bool,
        #[arg(long)]
        dry_run: bool,
    },
    /// Super-resolve one PNG, or every PNG in a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ensemble: bool,
        /// Process in LR tiles of this size.
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Finetune a checkpoint on a benchmark itself until validation PSNR
    /// plateaus, then report. An upper-bound study, not a fair evaluation.
    OracleFinetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dry_run: bool,
    },
    /// Write a procedural image dataset (`<root>/HR/*.png`).
    SynthData {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
