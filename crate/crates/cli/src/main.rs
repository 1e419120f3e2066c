//! `vaps`: generate data, train, evaluate and run ablation or repository
//! sweeps from the command line.
//!
//! Every command that produces files writes them into `--out` together with
//! a `manifest.json` holding the resolved configuration, seed, tool version
//! and SHA-256 of every input. Exit status is 0 on success, 2 for invalid
//! input and 3 when a run fails (divergence, I/O).

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vaps_core::data::{Split, WorldMode};
use vaps_core::pipeline::Ablation;

#[derive(Debug, Parser)]
#[command(name = "vaps", version, about = "Compositional zero-shot learning with visual prompt retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (features + labels JSON).
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metrics JSON and the bias curve.
    Eval(EvalArgs),
    /// Compare the full model with its ablations over several seeds.
    Ablate(AblateArgs),
    /// Grid over repository size and number of selected prompts.
    Sweep(SweepArgs),
    /// Print a summary of a checkpoint.
    InspectCkpt(InspectArgs),
    /// Check a feature file and its labels JSON.
    ValidateFeat(ValidateFeatArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// JSON file with `data` and `run` sections; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

/// Overrides shared by the training commands. Flags win over the config.
#[derive(Debug, Args)]
struct RunOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train one ablation variant: full, no-pr, no-pa or no-ca.
    #[arg(long, value_parser = parse_ablation)]
    ablate: Option<Ablation>,
    #[command(flatten)]
    run: RunOverrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Closed)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Open-world feasibility threshold: a number (`-inf` disables
    /// filtering) or `calibrate` to pick it on the validation split.
    #[arg(long, default_value = "calibrate", allow_hyphen_values = true)]
    threshold: String,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of seeds, starting from the configured seed.
    #[arg(long, default_value_t = 4)]
    seeds: u64,
    /// Variants to run; all four by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_ablation)]
    variants: Vec<Ablation>,
    #[command(flatten)]
    run: RunOverrides,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Repository sizes.
    #[arg(long = "M", value_delimiter = ',', default_values_t = [20, 30])]
    m: Vec<usize>,
    /// Numbers of selected prompts.
    #[arg(long = "N", value_delimiter = ',', default_values_t = [2, 4])]
    n: Vec<usize>,
    #[command(flatten)]
    run: RunOverrides,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Also write the summary and a manifest into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateFeatArgs {
    #[arg(long)]
    data: PathBuf,
    /// Expected feature dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Expected tokens per image.
    #[arg(long)]
    n_tokens: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Closed,
    Open,
}

impl From<ModeArg> for WorldMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Closed => WorldMode::Closed,
            ModeArg::Open => WorldMode::Open,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| format!("unknown ablation `{s}` (expected full, no-pr, no-pa or no-ca)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::InspectCkpt(a) => commands::inspect_ckpt(a),
        Command::ValidateFeat(a) => commands::validate_feat(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
