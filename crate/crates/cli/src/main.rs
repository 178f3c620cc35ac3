use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graspmt::adapt::{Method, ThresholdPolicy};

mod commands;
mod config;
mod manifest;

/// Invalid invocation detected after argument parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "graspmt",
    version,
    about = "Grasp detection training, adaptation and evaluation"
)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset in Cornell layout.
    Synth(SynthArgs),
    /// Train one stage of the network.
    Train(TrainArgs),
    /// Adapt a source model to labelled and unlabelled target data.
    Adapt(AdaptArgs),
    /// Score a checkpoint on a labelled split.
    Eval(EvalArgs),
    /// Run detection on one image.
    Detect(DetectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Shift {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Pose,
    Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Labelled,
    Unlabelled,
    Eval,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 90)]
    pub labelled: usize,
    #[arg(long, default_value_t = 270)]
    pub unlabelled: usize,
    /// Evaluation samples (defaults to the preset's count).
    #[arg(long)]
    pub eval: Option<usize>,
    #[arg(long, value_enum, default_value_t = Shift::Source)]
    pub shift: Shift,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct DataArg {
    /// Dataset directory; defaults to $GRASPMT_DATA_ROOT.
    #[arg(long, env = "GRASPMT_DATA_ROOT")]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Checkpoint to start from; required for the loc stage.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate of the trained stage.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    /// Target-domain dataset with labelled, unlabelled and eval splits.
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub source_ckpt: PathBuf,
    /// direct, mt, cmt or all.
    #[arg(long, default_value = "cmt", value_parser = parse_methods)]
    pub method: MethodList,
    #[arg(long, default_value_t = 9)]
    pub labelled_n: usize,
    /// Labelled samples for the LocNet fine-tune (defaults to --labelled-n; 0 skips it).
    #[arg(long)]
    pub loc_labelled_n: Option<usize>,
    /// auto, inf or a number.
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<ThresholdPolicy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArg,
    /// Split to score (defaults to eval, or labelled when there is no eval split).
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Detections per image; 1 scores only the most certain.
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// 16-bit depth image; zero depth is used without it.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub top_n: usize,
    /// Directory for the heatmap PGM and the detection CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct MethodList(pub Vec<Method>);

fn parse_methods(s: &str) -> Result<MethodList, String> {
    if s == "all" {
        return Ok(MethodList(Method::ALL.to_vec()));
    }
    s.parse()
        .map(|m| MethodList(vec![m]))
        .map_err(|e: graspmt::Error| e.to_string())
}

fn parse_threshold(s: &str) -> Result<ThresholdPolicy, String> {
    s.parse().map_err(|e: graspmt::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Detect(a) => commands::detect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already quote their cause; print each message once.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
