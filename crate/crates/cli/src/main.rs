//! `segcrowd`: ground truth, synthetic data, training, evaluation and inference.

mod commands;
mod settings;
mod strip;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "segcrowd",
    version,
    about = "Crowd counting with segmentation-guided density estimation"
)]
struct Cli {
    /// Seed for every random choice (falls back to SEGCROWD_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file supplying defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write density and segmentation ground truth for every manifest entry.
    GenGt(GenGtArgs),
    /// Generate a synthetic dataset directory with a manifest.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest; prints the report CSV.
    Eval(EvalArgs),
    /// Predict the count for one image and write its density map and strip.
    Infer(InferArgs),
}

#[derive(Args)]
pub struct GenGtArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub template_size: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_images: Option<usize>,
    #[arg(long)]
    pub count_min: Option<usize>,
    #[arg(long)]
    pub count_max: Option<usize>,
    /// Image size as HEIGHTxWIDTH.
    #[arg(long)]
    pub dims: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub template_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Network size: `default` or `tiny`.
    #[arg(long)]
    pub model: Option<String>,
    /// Train on whole images instead of augmented patches.
    #[arg(long)]
    pub no_augment: bool,
    /// Drop the count-classification task.
    #[arg(long)]
    pub no_cla: bool,
    /// Drop the segmentation task and its attention pathway.
    #[arg(long)]
    pub no_seg: bool,
    /// Drop supervision of the intermediate density map.
    #[arg(long)]
    pub no_intermediate: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict counting to each entry's region of interest.
    #[arg(long)]
    pub roi: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long, required_unless_present = "density")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the network and use this density DMAP as the prediction.
    #[arg(long)]
    pub density: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = {
        let config = cli.config.as_deref();
        match &cli.command {
            Command::GenGt(a) => commands::gen_gt(a, config),
            Command::Synth(a) => commands::synth(a, config, cli.seed),
            Command::Train(a) => commands::train(a, config, cli.seed),
            Command::Eval(a) => commands::eval(a, config),
            Command::Infer(a) => commands::infer(a, config),
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
