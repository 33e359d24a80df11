//! `meshrl`: collect traces from the surrogate, fit the system model, train
//! policies on the simulator and evaluate them on simulator and target.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 numerical
//! failure.

mod commands;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meshrl::Error;

#[derive(Parser, Debug)]
#[command(
    name = "meshrl",
    version,
    about = "Learning-based service mesh management pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the surrogate under uniformly random actions and write traces.
    Collect(CollectArgs),
    /// Fit the system model on traces and report held-out NMAE.
    FitModel(FitArgs),
    /// Train policies on the simulator; several configs train in parallel.
    Train(TrainArgs),
    /// Evaluate a trained policy.
    Evaluate(EvaluateArgs),
    /// Evaluate the model-optimal policy (ANR reference).
    Oracle(OracleArgs),
    /// Run the simulator/target × random/sine protocol and print the table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Scenario config; repeat to train several scenarios.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy-update budget (minibatch gradient steps).
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory for policies and learning curves.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnvArg {
    Sim,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PatternArg {
    Random,
    Sine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScoringArg {
    /// Surrogate closed form for both agent and optimum.
    Truth,
    /// Measured agent reward against the model optimum.
    Model,
}

#[derive(Args, Debug)]
struct EvalCommon {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ScoringArg::Truth)]
    scoring: ScoringArg,
    /// Output directory for the report and plot data.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, value_enum)]
    env: EnvArg,
    #[arg(long, value_enum)]
    pattern: PatternArg,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, value_enum)]
    env: EnvArg,
    #[arg(long, value_enum)]
    pattern: PatternArg,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Collect(a) => commands::collect(&a),
        Command::FitModel(a) => commands::fit_model(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
