use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use lightseg::data::Split;
use lightseg::nn::ConvKind;
use lightseg::train::{LossKind, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "lightseg", version, about = "Lightweight U-Net segmentation for high-resolution grayscale images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset with masks and a manifest.
    Synth(SynthArgs),
    /// Print the per-level parameter table of one configuration.
    Params(ParamsArgs),
    /// Print the parameter ladder of the named variants.
    Variants,
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Segment one image with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    /// Image extents as HxW.
    #[arg(long, default_value = "1536x1536", value_parser = parse_size)]
    pub size: [usize; 2],
    /// Pixel spacing in millimetres.
    #[arg(long, default_value_t = 0.15)]
    pub spacing: f64,
    /// Masses per image, inclusive range lo-hi.
    #[arg(long, default_value = "1-2", value_parser = parse_count_range)]
    pub masses: (usize, usize),
    /// Calcifications per image, inclusive range lo-hi.
    #[arg(long, default_value = "0-6", value_parser = parse_count_range)]
    pub calcs: (usize, usize),
    /// Mass diameter range in millimetres.
    #[arg(long, default_value = "5-20", value_parser = parse_mm_range)]
    pub mass_mm: (f64, f64),
    /// Calcification diameter range in millimetres.
    #[arg(long, default_value = "0.3-0.8", value_parser = parse_mm_range)]
    pub calc_mm: (f64, f64),
    /// Lesion intensity above background.
    #[arg(long, default_value_t = 0.3)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train/val/test counts as A/B/C; defaults to 3/4, 1/8, 1/8 of --count.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvArg {
    Standard,
    Separable,
}

impl From<ConvArg> for ConvKind {
    fn from(c: ConvArg) -> Self {
        match c {
            ConvArg::Standard => ConvKind::Standard,
            ConvArg::Separable => ConvKind::Separable,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Resolution levels including the bottleneck.
    #[arg(long, default_value_t = 7)]
    pub depth: usize,
    /// Filters at the first level; doubled per level.
    #[arg(long, default_value_t = 16)]
    pub filters: usize,
    #[arg(long, value_enum, default_value_t = ConvArg::Separable)]
    pub conv: ConvArg,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub residual: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also estimate training activation memory for HxW inputs.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Dice,
    #[value(name = "dice_plus_bce", alias = "dice-plus-bce")]
    DicePlusBce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Dice => LossKind::Dice,
            LossArg::DicePlusBce => LossKind::DicePlusBce,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History file; defaults to the checkpoint path with `.history.json`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = LossArg::DicePlusBce)]
    pub loss: LossArg,
    /// `full` or `patch:P,S` (patch size, stride).
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    pub mode: TrainMode,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Seeds both weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    /// Threshold for the per-epoch validation DICE.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// 8- or 16-bit grayscale PNG or PGM.
    #[arg(long)]
    pub image: PathBuf,
    /// Mask PNG to write (values 0 and 255).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Optional 16-bit probability map.
    #[arg(long)]
    pub probs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// JSON report to write.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad extent '{v}' in '{s}'"));
    Ok([p(h)?, p(w)?])
}

fn split_range(s: &str) -> Result<(&str, &str), String> {
    match s.split_once('-') {
        Some(pair) => Ok(pair),
        None => Ok((s, s)),
    }
}

fn parse_count_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = split_range(s)?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad count '{v}' in '{s}'"));
    let (lo, hi) = (p(a)?, p(b)?);
    if lo > hi {
        return Err(format!("range '{s}' has lo > hi"));
    }
    Ok((lo, hi))
}

fn parse_mm_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_range(s)?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad length '{v}' in '{s}'"));
    Ok((p(a)?, p(b)?))
}

fn parse_split(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() != 3 {
        return Err(format!("expected TRAIN/VAL/TEST, got '{s}'"));
    }
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad count '{v}' in '{s}'"));
    Ok([p(parts[0])?, p(parts[1])?, p(parts[2])?])
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    if s == "full" {
        return Ok(TrainMode::FullImage);
    }
    let rest = s.strip_prefix("patch:").ok_or_else(|| format!("expected 'full' or 'patch:P,S', got '{s}'"))?;
    let (p, st) = rest.split_once(',').unwrap_or((rest, rest));
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad number '{v}' in '{s}'"));
    Ok(TrainMode::Patch { patch: n(p)?, stride: n(st)? })
}
