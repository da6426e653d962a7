use std::path::PathBuf;

use acfl_core::acfl::{Channel, GradientRouting};
use acfl_core::gcn::OutputKind;
use acfl_core::skeleton::Form;
use acfl_core::training::{RunMode, StreamSet};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "acfl", version, about = "Skeleton action recognition with cross-form mimicking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic train/test dataset.
    GenData(GenDataArgs),
    /// Train single-form baselines or cross-form models.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Late-fuse categorical maps of several forms.
    Fuse(FuseArgs),
    /// Per-class report of a finished run.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Fraction of each class that goes to the training split.
    #[arg(long, default_value_t = 0.75)]
    pub split: f64,
    /// Seed of the class definitions, kept apart from the sample seed.
    #[arg(long, default_value_t = 0)]
    pub class_seed: u64,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// JSON object merged over the generator defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sfrl,
    AcflOnline,
    AcflOffline,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sfrl => RunMode::Sfrl,
            ModeArg::AcflOnline => RunMode::AcflOnline,
            ModeArg::AcflOffline => RunMode::AcflOffline,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Bce,
    Softmax,
}

impl From<LossArg> for OutputKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => OutputKind::SigmoidBce,
            LossArg::Softmax => OutputKind::SoftmaxCe,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RoutingArg {
    Learnable,
    Detached,
}

impl From<RoutingArg> for GradientRouting {
    fn from(r: RoutingArg) -> Self {
        match r {
            RoutingArg::Learnable => GradientRouting::Learnable,
            RoutingArg::Detached => GradientRouting::Detached,
        }
    }
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("run_mode").required(true).multiple(false)
    .args(["mode", "sfrl", "acfl_online", "acfl_offline"]))]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Same as `--mode sfrl`.
    #[arg(long)]
    pub sfrl: bool,
    /// Same as `--mode acfl-online`.
    #[arg(long)]
    pub acfl_online: bool,
    /// Same as `--mode acfl-offline`.
    #[arg(long)]
    pub acfl_offline: bool,

    /// Dataset directory from `gen-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range `a..b` (exclusive) or `a..=b`; runs go to `out/seed-<s>`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Forms to train (baselines) or to use as targets (off-line).
    #[arg(long, value_delimiter = ',')]
    pub forms: Option<Vec<Form>>,
    /// Run directory or checkpoint folder of the pretrained sources.
    #[arg(long)]
    pub sources: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr_drops: Option<Vec<usize>>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Gradient norm cap; 0 disables clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,

    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<Channel>>,
    /// Source forms left out of the attention.
    #[arg(long, value_delimiter = ',')]
    pub mask_sources: Option<Vec<Form>>,
    /// Drop the regulatory factors.
    #[arg(long)]
    pub no_beta: bool,
    #[arg(long)]
    pub mimic_weight: Option<f64>,
    #[arg(long, value_enum)]
    pub routing: Option<RoutingArg>,
}

impl TrainArgs {
    pub fn run_mode(&self) -> RunMode {
        if self.sfrl {
            RunMode::Sfrl
        } else if self.acfl_online {
            RunMode::AcflOnline
        } else if self.acfl_offline {
            RunMode::AcflOffline
        } else {
            self.mode.expect("clap enforces one mode").into()
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Run directories holding the stream checkpoints; searched in order.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "2s")]
    pub streams: StreamSet,
    /// One weight per stream; equal weights by default.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Form whose per-class table goes to the CSV; first trained form by default.
    #[arg(long)]
    pub form: Option<Form>,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
