//! `ilm`: data generation, training, sampling, infilling, evaluation and
//! oracle checks.

mod config;
mod data;
mod eval;
mod gen_data;
mod oracle;
mod run;
mod sample;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ilm::error::ErrorClass;
use ilm::tasks::TaskSpec;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

/// A bad invocation that clap cannot catch on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// A check that ran and failed (oracle mismatch).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser)]
#[command(name = "ilm", version, about = "Insertion language models and baselines")]
struct Cli {
    /// Default parent directory for generated data and runs.
    #[arg(long, global = true, env = "ILM_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test record files for a synthetic task.
    GenData(GenDataArgs),
    /// Train a model on a generated data directory.
    Train(train::TrainArgs),
    /// Draw unconditional (or prompted) samples from a checkpoint.
    Sample(sample::SampleArgs),
    /// Fill `<gap>` (ILM/IT) or `<mask>` (MDM) blanks in templates.
    Infill(sample::InfillArgs),
    /// Accuracy, generation or infilling metrics.
    Eval(eval::EvalArgs),
    /// Exhaustive check of corpus targets against the exact posterior.
    OracleCheck(oracle::OracleArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(TaskSpec::NAMES))]
    task: String,
    /// Defaults to `<run-root>/data/<task>-s<seed>`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Accuracy,
    Generation,
    Infill,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<UsageError>() {
        return EXIT_USAGE;
    }
    if e.is::<CheckFailed>() {
        return EXIT_VALIDATION;
    }
    if let Some(err) = e.downcast_ref::<ilm::Error>() {
        return match (err, err.class()) {
            (ilm::Error::Config(_), _) => EXIT_USAGE,
            (_, ErrorClass::Io) => EXIT_IO,
            (_, ErrorClass::Numerical) => EXIT_NUMERICAL,
            (_, ErrorClass::Validation) => EXIT_VALIDATION,
        };
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return EXIT_IO;
    }
    EXIT_VALIDATION
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::GenData(a) => gen_data::run(&cli.run_root, a),
        Command::Train(a) => train::run(&cli.run_root, a),
        Command::Sample(a) => sample::run_sample(a),
        Command::Infill(a) => sample::run_infill(a),
        Command::Eval(a) => eval::run(a),
        Command::OracleCheck(a) => oracle::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
