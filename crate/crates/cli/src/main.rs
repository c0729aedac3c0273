use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "dpfaga", version, about = "Power-flow surrogate workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid case JSON; the bundled IEEE 14-bus case when omitted.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, validation and test datasets.
    Generate(commands::GenerateArgs),
    /// Corrupt the inputs of a dataset file.
    Perturb(commands::PerturbArgs),
    /// Train one surrogate model and write its checkpoint and loss curves.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on test datasets.
    Eval(commands::EvalArgs),
    /// Learn an adaptive-neighbor graph with a fixed number of components.
    Can(commands::CanArgs),
    /// Semi-supervised fault labeling with variational EM.
    FaultEm(commands::FaultEmArgs),
    /// Run an experiment matrix.
    Bench(commands::BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result: Result<(), CliError> = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Can(a) => commands::can(a),
        Command::FaultEm(a) => commands::fault_em(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
