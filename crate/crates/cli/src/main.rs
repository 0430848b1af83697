//! `plansim`: simulate, sweep and schedule 3D-parallel transformer training.

mod chinchilla;
mod cluster;
mod config;
mod profile;
mod simulate;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "plansim",
    version,
    about = "Training-time simulator for 3D-parallel transformer plans"
)]
struct Cli {
    /// Worker threads for sweeps and curve building (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    parallel: Option<usize>,
    /// Directory searched for profiles not found next to the config
    /// (overrides PLANSIM_PROFILE_DIR).
    #[arg(long, global = true)]
    profile_dir: Option<PathBuf>,
    /// More logging on stderr; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one training iteration of a plan.
    Simulate(simulate::Args),
    /// Evaluate every plan within bounds and pick per GPU budget.
    Sweep(sweep::Args),
    /// Compute-optimal model sizing.
    Chinchilla(chinchilla::Args),
    /// Replay a job trace on a shared cluster in both curve modes.
    Cluster(cluster::Args),
    /// Check profile files for structural problems.
    ValidateProfile(profile::ValidateArgs),
    /// Write a deterministic synthetic profile.
    SynthProfile(profile::SynthArgs),
}

fn dispatch(cli: Cli) -> Result<()> {
    let dir = config::profile_dir(cli.profile_dir.as_deref());
    let dir = dir.as_deref();
    match cli.command {
        Command::Simulate(a) => simulate::run(a, dir),
        Command::Sweep(a) => sweep::run(a, dir),
        Command::Chinchilla(a) => chinchilla::run(a, dir),
        Command::Cluster(a) => cluster::run(a, dir),
        Command::ValidateProfile(a) => profile::validate(a),
        Command::SynthProfile(a) => profile::synth(a),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.parallel {
        Some(0) => Err(config::invalid("--parallel must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(config::exit_code(&e))
        }
    }
}
