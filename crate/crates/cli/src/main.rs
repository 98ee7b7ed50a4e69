//! `quatsign`: the command-line front end of quatsign-core.
// Float guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quatsign_core::{Contrastive, OutputMode};

#[derive(Parser, Debug)]
#[command(
    name = "quatsign",
    version,
    about = "Quaternion pose encoding, gloss-to-pose training and evaluation",
    args_override_self = true,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a pose file into a rotation file.
    Encode(CodecArgs),
    /// Convert a rotation file back into a pose file.
    Decode(CodecArgs),
    /// Score predictions against ground truth (MJE, MBAE, PCK).
    Eval(EvalArgs),
    /// Evaluate one named loss on files.
    Loss(LossArgs),
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Compare reverse-mode gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the whole configuration grid.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Tiny,
    Toy,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    #[value(name = "mse_joints")]
    MseJoints,
    #[value(name = "geodesic")]
    Geodesic,
    #[value(name = "root")]
    Root,
    #[value(name = "gloss_supcon")]
    GlossSupcon,
    #[value(name = "sbert_supcon")]
    SbertSupcon,
}

#[derive(Args, Debug)]
pub struct CodecArgs {
    /// Skeleton JSON file.
    #[arg(long)]
    skeleton: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file supplying any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Predicted pose or rotation file.
    #[arg(long, requires_all = ["gt", "skeleton"], conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Ground-truth pose or rotation file.
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Checkpoint to generate from instead of a prediction file.
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest scored against the checkpoint's generations.
    #[arg(long, requires = "checkpoint")]
    data: Option<PathBuf>,
    /// Add per-body-part MJE rows.
    #[arg(long)]
    per_part: bool,
    /// PCK threshold as a fraction of each joint's motion radius.
    #[arg(long, allow_negative_numbers = true, default_value_t = quatsign_core::metrics::DEFAULT_PCK_ALPHA)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    #[arg(long, value_enum)]
    name: LossName,
    /// Skeleton JSON file (pose and rotation losses).
    #[arg(long)]
    skeleton: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// CSV of `sample_id,values...` (contrastive losses).
    #[arg(long)]
    latents: Option<PathBuf>,
    /// TSV of `sample_id<TAB>glosses` (gloss_supcon).
    #[arg(long)]
    glosses: Option<PathBuf>,
    /// CSV of 384-wide sentence embeddings (sbert_supcon).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, default_value_t = quatsign_core::losses::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory receiving the manifest and its files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    num_glosses: usize,
    #[arg(long, default_value_t = 32)]
    num_sequences: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    glosses_per_sequence: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Training flags shared by `train` and `sweep`; unset values fall back to the preset.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    #[arg(long, default_value = "quaternion")]
    mode: OutputMode,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of decoder inputs replaced by the model's own predictions.
    #[arg(long, allow_negative_numbers = true)]
    scheduled_sampling: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    dropout: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "none")]
    contrastive: Contrastive,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Evaluate on the training set every this many epochs (0 = never).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Directory receiving checkpoint.qsc, log.jsonl and config.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, allow_negative_numbers = true)]
    gloss_lambda: Option<f64>,
    /// Sentence-loss weights for the Cartesian runs.
    #[arg(long, allow_negative_numbers = true, value_delimiter = ',', action = clap::ArgAction::Set)]
    cartesian_lambdas: Option<Vec<f64>>,
    /// Sentence-loss weights for the quaternion runs.
    #[arg(long, allow_negative_numbers = true, value_delimiter = ',', action = clap::ArgAction::Set)]
    quaternion_lambdas: Option<Vec<f64>>,
    /// Batch sizes for the Cartesian sentence runs.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long, allow_negative_numbers = true)]
    batch_sweep_lambda: Option<f64>,
    /// Runs trained at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Directory receiving one file per run and the merged table.
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<quatsign_core::Error> for Failure {
    fn from(e: quatsign_core::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn run(argv: Vec<std::ffi::OsString>) -> Result<(), Failure> {
    let argv = config::expand(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // Help and version requests.
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Failure::Usage(e.render().to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Loss(a) => commands::loss(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Sweep(a) => commands::sweep(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().trim_start_matches("error: "));
            ExitCode::from(f.code())
        }
    }
}
