//! `rme`: prepare data, train, evaluate and grid-search regularized
//! multi-embedding recommenders.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod commands;
mod config;
mod error;

use config::ExperimentConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "rme", version, about)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set model.k=50`. Repeatable;
    /// applied after the file, so the command line wins.
    #[arg(short = 's', long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and split the data; write SPPMI matrices.
    Prep,
    /// Train a model per fold from the prepared splits.
    Train,
    /// Evaluate trained models on the test split.
    Eval {
        /// Evaluate this model file against fold 0 instead.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Grid-search hyperparameters on the validation split of fold 0.
    Grid,
    /// Dump negatives drawn from the trained models.
    Negdump,
    /// Print the effective config.
    Config,
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Prep => commands::prep(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval { model } => commands::eval(&cfg, model.as_deref()).map(|_| ()),
        Command::Grid => commands::grid(&cfg).map(|_| ()),
        Command::Negdump => commands::negdump(&cfg),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
