//! `fedselect`: training simulations, participant-count estimates and
//! test-set composition from the command line.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod query;
mod train;

#[derive(Parser)]
#[command(name = "fedselect", version, about = "Participant selection for federated training and testing")]
struct Cli {
    /// Log progress and write per-client utility breakdowns.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate federated training under one or more selection policies.
    SimulateTrain(train::TrainArgs),
    /// Participants needed to bound the deviation of the sampled data.
    EstimateCount(query::EstimateArgs),
    /// Pick participants meeting a per-category sample preference.
    ComposeTestset(query::ComposeArgs),
    /// Write a synthetic distribution query.
    GenQuery(query::GenArgs),
    /// Time the greedy cover against the exact solver.
    BenchCover(query::BenchArgs),
}

/// Flags shared by commands that write files.
#[derive(Args, Clone)]
pub struct OutDir {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// A bad flag or config value. Exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("FEDSELECT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("FEDSELECT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = init_threads().and_then(|()| match cli.command {
        Command::SimulateTrain(args) => train::run(args, cli.verbose),
        Command::EstimateCount(args) => query::estimate(args),
        Command::ComposeTestset(args) => query::compose(args),
        Command::GenQuery(args) => query::generate(args),
        Command::BenchCover(args) => query::bench(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
