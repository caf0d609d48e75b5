use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netsynth::dimreduce::ReducerKind;
use netsynth::schemes::Scheme;

mod commands;
mod manifest;
mod report;

use manifest::Overrides;

#[derive(Parser, Debug)]
#[command(name = "netsynth", version, about = "Grow-and-prune synthesis of compact feed-forward networks")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a CSV or IDX dataset, split it and write a prepared dataset directory.
    Prep(commands::PrepArgs),
    /// Search for the dense baseline MLP.
    Baseline(RunArgs),
    /// Run one synthesis scheme.
    Synth(RunArgs),
    /// Baseline, per-layer compression and synthesis over all candidates.
    Sweep(RunArgs),
    /// Predict labels for a feature file with a saved model bundle.
    Infer(commands::InferArgs),
    /// Build comparison tables from completed runs.
    Report(report::ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Prepared dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "NETSYNTH_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long, value_parser = parse_reducer)]
    reducer: Option<ReducerKind>,
    #[arg(long)]
    k: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.clone(),
            out: self.out.clone(),
            seed: self.seed,
            seeds: self.seeds,
            scheme: self.scheme,
            reducer: self.reducer,
            k: self.k,
        }
    }

    fn workers(&self) -> usize {
        self.workers
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s.to_ascii_uppercase().as_str() {
        "A" => Ok(Scheme::A),
        "B" => Ok(Scheme::B),
        "C" => Ok(Scheme::C),
        _ => Err(format!("expected A, B or C, got {s:?}")),
    }
}

fn parse_reducer(s: &str) -> Result<ReducerKind, String> {
    ReducerKind::parse(s).map_err(|e| e.to_string())
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Usage = 2,
    Data = 3,
    Run = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Self {
        Self { code: Code::Usage, error }
    }

    /// Data errors from the library get their own code; anything else is a
    /// failed run.
    pub fn run(error: anyhow::Error) -> Self {
        let data = error
            .chain()
            .any(|e| e.downcast_ref::<netsynth::Error>().is_some_and(netsynth::Error::is_data_error));
        Self {
            code: if data { Code::Data } else { Code::Run },
            error,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Prep(a) => commands::prep(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Report(a) => report::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
