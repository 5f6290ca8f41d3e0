use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod svg;

use commands::Mode;
use config::{Flags, RunConfig};
use error::CliError;

/// Asynchronous movement-onset detection from multichannel EEG.
#[derive(Debug, Parser)]
#[command(name = "movedetect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset to --out.
    Synth(Flags),
    /// Train every fold's base models and save them under models/.
    Train(Flags),
    /// Offline window accuracy per method.
    EvalOffline(Flags),
    /// Pseudo-online replay: TWP/EDR/NDR and per-trial outcomes.
    EvalPseudoOnline(Flags),
    /// Offline and pseudo-online evaluation plus statistics.
    FullMatrix(Flags),
    /// Friedman and pairwise Wilcoxon tests over a results table.
    Stats(Flags),
    /// Summary table (and optional SVG charts) from a results table.
    Report(Flags),
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    let (flags, mode) = match cmd {
        Command::Synth(f) => return commands::synth(&RunConfig::resolve(f)?),
        Command::Stats(f) => return commands::stats(&RunConfig::resolve(f)?),
        Command::Report(f) => return commands::report(&RunConfig::resolve(f)?),
        Command::Train(f) => (f, Mode::Train),
        Command::EvalOffline(f) => (f, Mode::EvalOffline),
        Command::EvalPseudoOnline(f) => (f, Mode::EvalPseudoOnline),
        Command::FullMatrix(f) => (f, Mode::FullMatrix),
    };
    commands::run(mode, &RunConfig::resolve(flags)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
