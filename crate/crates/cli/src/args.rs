use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tridenoise::Arch;

#[derive(Debug, Parser)]
#[command(name = "tridenoise", version, about = "Two-stage color image denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both stages and write a checkpoint.
    Train(TrainArgs),
    /// Denoise an image or every image in a folder.
    Denoise(DenoiseArgs),
    /// Mean PSNR/SSIM over a dataset at several noise levels.
    Eval(EvalArgs),
    /// Write a procedural image set.
    Synth(SynthArgs),
    /// Write an initialized (or all-zero) checkpoint.
    Init(InitArgs),
}

/// Topology flags. Unset fields fall back to the defaults, or to the
/// checkpoint when resuming.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// 3dr, 3dr+alexmini or 3dr+vggmini [default: 3dr+alexmini]
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    /// First-stage branches, 1 to 3 [default: 2]
    #[arg(long)]
    pub branches: Option<usize>,
    /// Hidden feature maps per first-stage layer [default: 32]
    #[arg(long)]
    pub width: Option<usize>,
    /// Weight of the first of two branches [default: 0.5]
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = false, multiple = false)]
pub struct NoiseArgs {
    /// Fixed noise level, 8-bit units [default: 25]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blind training: per-sample level drawn from MIN:MAX
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_range)]
    pub blind: Option<(f64, f64)>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct CorpusArgs {
    /// Folder of PNG/PPM training images
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Procedural corpus of COUNT images of SIZE x SIZE
    #[arg(long, value_name = "COUNT:SIZE", value_parser = parse_count_size)]
    pub synth: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Checkpoint written at every log point and at the end
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 200_000)]
    pub iters1: usize,
    #[arg(long, default_value_t = 90_000)]
    pub iters2: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr1: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr2: f64,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// Side of the square training crops
    #[arg(long, default_value_t = 180)]
    pub crop: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Continue from a checkpoint written by `train`
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Validation folder; defaults to a few held-out images
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Clamp noisy training samples to [0, 1]
    #[arg(long)]
    pub clip: bool,
    /// Train in double precision
    #[arg(long = "f64")]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image file or folder
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or folder when the input is a folder
    #[arg(long)]
    pub output: PathBuf,
    /// Average over the four rotations of the input
    #[arg(long)]
    pub ensemble: bool,
    /// Clean reference (file or folder) for PSNR/SSIM
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Refuse checkpoints of another architecture
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    #[arg(long = "f64")]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Folder of clean images
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "15,25,50")]
    pub sigmas: Vec<f64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub clip: bool,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    #[arg(long = "f64")]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Output folder, created if missing
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// All parameters zero (the identity denoiser)
    #[arg(long)]
    pub zero: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: tridenoise::Error| e.to_string())
}

fn split_pair(s: &str) -> Result<(&str, &str), String> {
    s.split_once(':').ok_or_else(|| format!("expected A:B, got {s:?}"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = split_pair(s)?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("invalid number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("invalid number {b:?}"))?;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(format!("need 0 < MIN <= MAX, got {s}"));
    }
    Ok((lo, hi))
}

fn parse_count_size(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = split_pair(s)?;
    let count = a.trim().parse().map_err(|_| format!("invalid count {a:?}"))?;
    let size = b.trim().parse().map_err(|_| format!("invalid size {b:?}"))?;
    if count == 0 || size == 0 {
        return Err("count and size must be positive".into());
    }
    Ok((count, size))
}
