//! Command-line arguments. Every subcommand's arguments serialize into the
//! run manifest, so a manifest alone is enough to repeat a run.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curvprobe::attacks::AttackKind;
use curvprobe::boundary::{TravelParams, TravelVariant};
use curvprobe::data::DataFormat;
use curvprobe::projection::Basis;
use curvprobe::train::{Optimizer, Schedule};
use curvprobe::trajectory::ModeTag;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "curvprobe", version, about = "Representation-space geometry probes for small image classifiers")]
pub struct Cli {
    /// Worker threads for per-sample fan-out. Output rows are sorted, so any value gives the same CSV rows.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Global seed for initialization, subsets, random directions and jumps.
    #[arg(long, global = true, env = "CURVPROBE_SEED", default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Write a procedural stand-in dataset in CIFAR-10 or IDX layout.
    Synth(SynthArgs),
    /// Train a CNN or ViT and log per-sample training dynamics.
    Train(TrainArgs),
    /// Expected and signed calibration error with a reliability diagram.
    Calibrate(CalibrateArgs),
    /// Linear travel to the decision boundary against prediction confidence.
    Boundary(BoundaryArgs),
    /// Feature-space trajectories along input-space lines.
    Trajectory(TrajectoryArgs),
    /// Sign-gradient attacks, robustness by curvedness and random-jump pairing.
    Attack(AttackArgs),
    /// 2D projection of features over an input-space grid.
    Gridviz(GridvizArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Boundary(_) => "boundary",
            Command::Trajectory(_) => "trajectory",
            Command::Attack(_) => "attack",
            Command::Gridviz(_) => "gridviz",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Makes every recorded path absolute so a manifest works from any directory.
    pub fn absolutize(&mut self) -> std::io::Result<()> {
        let mut paths: Vec<&mut PathBuf> = Vec::new();
        match self {
            Command::Synth(a) => paths.push(&mut a.out),
            Command::Train(a) => paths.extend([&mut a.data.data, &mut a.out]),
            Command::Calibrate(a) => paths.extend([&mut a.model.model, &mut a.data.data, &mut a.out]),
            Command::Boundary(a) => paths.extend([&mut a.model.model, &mut a.data.data, &mut a.out]),
            Command::Trajectory(a) => paths.extend([&mut a.model.model, &mut a.data.data, &mut a.out]),
            Command::Attack(a) => paths.extend([&mut a.model.model, &mut a.data.data, &mut a.out]),
            Command::Gridviz(a) => paths.extend([&mut a.model.model, &mut a.data.data, &mut a.out]),
            Command::Rerun(a) => paths.push(&mut a.manifest),
        }
        for p in paths {
            *p = std::path::absolute(&*p)?;
        }
        Ok(())
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Synth(a) => Some(&mut a.out),
            Command::Train(a) => Some(&mut a.out),
            Command::Calibrate(a) => Some(&mut a.out),
            Command::Boundary(a) => Some(&mut a.out),
            Command::Trajectory(a) => Some(&mut a.out),
            Command::Attack(a) => Some(&mut a.out),
            Command::Gridviz(a) => Some(&mut a.out),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArgs {
    /// Dataset file, or a directory holding the standard file names.
    #[arg(long)]
    pub data: PathBuf,

    /// On-disk format: idx or cifar.
    #[arg(long, default_value = "cifar")]
    pub format: DataFormat,

    /// Split to read from a dataset directory (train or test); defaults per subcommand.
    #[arg(long)]
    pub split: Option<String>,

    /// Random subset of this many samples; 0 keeps them all.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Bracketed,
    Literal,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TravelArgs {
    /// First travel length.
    #[arg(long, default_value_t = 1e-3)]
    pub eps_i: f64,

    /// Shrink factor once the boundary has been passed.
    #[arg(long, default_value_t = 0.9)]
    pub eps_d: f64,

    /// Relative bracket width at which the search stops.
    #[arg(long, default_value_t = 0.01)]
    pub eps_t: f64,

    /// Longest travel tried before giving up.
    #[arg(long, default_value_t = 1.0)]
    pub eps_max: f64,

    /// Forward-pass budget per travel.
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,

    #[arg(long, value_enum, default_value_t = Variant::Bracketed)]
    pub variant: Variant,
}

impl TravelArgs {
    pub fn params(&self) -> TravelParams {
        TravelParams {
            eps_init: self.eps_i,
            eps_decay: self.eps_d,
            eps_tol: self.eps_t,
            max_probes: self.max_iter,
            eps_max: self.eps_max,
            variant: match self.variant {
                Variant::Bracketed => TravelVariant::Bracketed,
                Variant::Literal => TravelVariant::Literal,
            },
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Layout to write: cifar (3x32x32) or idx (1x28x28).
    #[arg(long, default_value = "cifar")]
    pub format: DataFormat,

    #[arg(long, default_value_t = 5000)]
    pub train: usize,

    #[arg(long, default_value_t = 1000)]
    pub test: usize,

    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cnn,
    Vit,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Arch,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 60)]
    pub epochs: usize,

    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Peak learning rate.
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,

    /// Decoupled weight decay on matrices and kernels.
    #[arg(long, default_value_t = 0.05)]
    pub wd: f64,

    /// adamw or sgd (momentum 0.9).
    #[arg(long, default_value = "adamw")]
    pub optimizer: Optimizer,

    /// cosine or constant.
    #[arg(long, default_value = "cosine")]
    pub schedule: Schedule,

    #[arg(long, default_value_t = 10)]
    pub ckpt_every: usize,

    /// Training samples whose loss and theta(1) are logged at each checkpoint.
    #[arg(long, default_value_t = 1000)]
    pub track_n: usize,

    /// Step length of the logged theta(1).
    #[arg(long, default_value_t = 0.002)]
    pub theta_step: f64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 10)]
    pub bins: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Travel direction: fgsm, rand, fgsm_perp, rand_jump_fgsm or fgsm_jump_fgsm.
    #[arg(long, default_value = "fgsm")]
    pub mode: ModeTag,

    /// Jump length for the jump modes.
    #[arg(long, default_value_t = 0.05)]
    pub eps_r: f64,

    #[command(flatten)]
    pub travel: TravelArgs,

    /// Confidence bins for the mean-epsilon line.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Comma-separated direction modes.
    #[arg(long, value_delimiter = ',', default_value = "fgsm,rand,fgsm_perp,rand_jump_fgsm,fgsm_jump_fgsm")]
    pub modes: Vec<ModeTag>,

    #[arg(long, default_value_t = 50)]
    pub n_steps: usize,

    /// Input-space step length; the travel is `n_steps * step` long.
    #[arg(long, default_value_t = 0.002)]
    pub step: f64,

    /// Travel exactly to each sample's boundary instead of a fixed length.
    #[arg(long)]
    pub to_boundary: bool,

    #[arg(long, default_value_t = 0.05)]
    pub eps_r: f64,

    /// Comma-separated base seeds for the random modes; defaults to the global seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    #[command(flatten)]
    pub travel: TravelArgs,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AttackArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// fgsm (boundary travel), ifgsm, or rand_jump_fgsm.
    #[arg(long, default_value = "ifgsm")]
    pub kind: AttackKind,

    /// l-infinity budget for ifgsm.
    #[arg(long, default_value_t = 0.002)]
    pub eps: f64,

    #[arg(long, default_value_t = 10)]
    pub iters: usize,

    #[arg(long, default_value_t = 0.05)]
    pub eps_r: f64,

    /// Bins over [0, pi] for the robustness table.
    #[arg(long, default_value_t = 6)]
    pub theta_bins: usize,

    /// Step length of the theta(1) used for binning.
    #[arg(long, default_value_t = 0.002)]
    pub theta_step: f64,

    #[command(flatten)]
    pub travel: TravelArgs,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GridvizArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Dataset index of the center image.
    #[arg(long)]
    pub image: usize,

    /// Outermost grid offset; defaults to twice the image's FGSM boundary distance.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Half-width: the grid has (2N+1)^2 points.
    #[arg(long, default_value_t = 7)]
    pub n: usize,

    /// pca or random.
    #[arg(long, default_value = "pca")]
    pub basis: Basis,

    /// Center the grid on a random jump of this length.
    #[arg(long)]
    pub eps_r: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    /// manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Write artifacts here instead of the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
