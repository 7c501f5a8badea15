use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sepkern::pipeline::Reduction;

#[derive(Debug, Parser)]
#[command(
    name = "sepkern",
    version,
    about = "Adaptive separable convolution frame interpolation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the frame halfway between two frames.
    Interpolate(InterpolateArgs),
    /// Score a directory of triplets and emit per-sample PSNR as CSV.
    Eval(EvalArgs),
    /// Train a network from a JSON config.
    Train(TrainArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Time delayed against legacy padding.
    Bench(BenchArgs),
    /// Write a synthetic translation dataset as PNG triplets.
    Synth(SynthArgs),
}

/// Height and width written as `HxW`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Size {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |v: &str| match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("invalid extent {v:?} in {s:?}")),
        };
        Ok(Size {
            height: parse(h)?,
            width: parse(w)?,
        })
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EnsembleArgs {
    /// Number of self-ensemble variants (1, 2, 4, 8 or 16).
    #[arg(long, default_value_t = 1)]
    pub ensemble: usize,
    /// How ensemble predictions are combined.
    #[arg(long, default_value_t = Reduction::Mean)]
    pub reduce: Reduction,
    /// Apply the kernels without dividing by the kernel mass.
    #[arg(long)]
    pub no_kernel_norm: bool,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub frame1: PathBuf,
    #[arg(long)]
    pub frame2: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ground truth for a PSNR report; frame 1 is used when absent.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Pad the frames before the network instead of at kernel application.
    #[arg(long)]
    pub legacy_padding: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<id>_frame1.png`, `<id>_gt.png`, `<id>_frame2.png`.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with `model`, `train`, `loss` and `data` sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV destination, written after every epoch.
    #[arg(long)]
    pub curve: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Height and width of the random problems.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Kernel size.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 2)]
    pub base_channels: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Frame size as `HxW`.
    #[arg(long, default_value = "512x512")]
    pub size: Size,
    /// Kernel size.
    #[arg(long, default_value_t = 51)]
    pub k: usize,
    /// Timed repetitions per mode.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub reps: u32,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = 4)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also time a self-ensemble of this many variants.
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value = "32x32")]
    pub size: Size,
    #[arg(long, default_value_t = 2.0)]
    pub max_disp: f64,
    #[arg(long, default_value_t = 0.0)]
    pub min_disp: f64,
    /// Kernel size the displacements must fit.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1.5)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
