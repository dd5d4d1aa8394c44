mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "stdeep", version, about = "Spatio-temporal deepfake detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every command accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; falls back to the config file, then STDEEP_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Crop side in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Comma-separated subset of M1..M4.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub motion_heavy_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// image2d, seq_lstm, seq_bigru, st3d (st3d_residual) or st3d_inception.
    #[arg(long)]
    pub family: Option<String>,
    /// Optimizer defaults: desk (from-scratch desk models) or full (published full-scale settings).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long)]
    pub augment: Option<bool>,
    /// plateau or multiplicative.
    #[arg(long)]
    pub scheduler: Option<String>,
    /// Window stride for validation scoring.
    #[arg(long)]
    pub val_stride: Option<usize>,
    /// Data workers; training is sequential, so only 1 is accepted.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProbeInput {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Restrict to videos carrying this tag, e.g. motion_heavy.
    #[arg(long = "set")]
    pub set: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SynthArgs,
    },
    /// Train one encoder and write its checkpoint and log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated methods withheld from train and val.
        #[arg(long)]
        exclude_methods: Option<String>,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Score a split and write the class-level precision table.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Treat the manifest as a foreign corpus; refused if it is the training manifest.
        #[arg(long)]
        cross: bool,
    },
    /// Leave-out campaign: a baseline plus one model per withheld group.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `singletons` or groups like "M1,M4;M2,M3".
        #[arg(long)]
        groups: Option<String>,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Perturbation battery, feature embedding or activation maps.
    Probe {
        #[command(subcommand)]
        kind: ProbeCommand,
    },
    /// Collect run artifacts into a markdown summary.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directories holding run artifacts.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    Battery {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ProbeInput,
    },
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ProbeInput,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
    },
    Cam {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: ProbeInput,
        /// Video id to visualize.
        #[arg(long)]
        video: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common, args } => commands::synth(&common, &args),
        Command::Train { common, manifest, exclude_methods, args } => commands::train(&common, manifest, exclude_methods, &args),
        Command::Eval { common, checkpoint, manifest, split, stride, threshold, cross } => {
            commands::eval(&common, checkpoint, manifest, split, stride, threshold, cross)
        }
        Command::Campaign { common, manifest, groups, args } => commands::campaign(&common, manifest, groups, &args),
        Command::Probe { kind } => match kind {
            ProbeCommand::Battery { common, input } => commands::probe_battery(&common, &input),
            ProbeCommand::Embed { common, input, perplexity, iters } => commands::probe_embed(&common, &input, perplexity, iters),
            ProbeCommand::Cam { common, input, video } => commands::probe_cam(&common, &input, video),
        },
        Command::Report { common, inputs } => commands::report(&common, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
