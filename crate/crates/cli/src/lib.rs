//! Command implementations behind the `idea` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod shift;

use anyhow::{bail, Result};

use args::Command;
use config::RunConfig;

/// Runs one command; the returned text goes to standard output.
pub fn run(command: &Command) -> Result<String> {
    let cfg = RunConfig::resolve(command.flags())?;
    Ok(match command {
        Command::Train(_) => commands::cmd_train(&cfg)?,
        Command::Eval(_) => {
            let table = commands::cmd_eval(&cfg)?;
            table.to_csv()
        }
        Command::Forecast(_) => {
            let outcome = commands::cmd_forecast(&cfg)?;
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("error: {f}");
                }
                bail!(
                    "{} series could not be forecast; {} values written",
                    outcome.failures.len(),
                    outcome.written
                );
            }
            format!("{} forecast values written\n", outcome.written)
        }
        Command::ShiftExperiment(_) => commands::cmd_shift_experiment(&cfg)?.to_text(),
        Command::Stats(_) => commands::cmd_stats(&cfg)?,
        Command::Synth(_) => format!("{}\n", commands::cmd_synth(&cfg)?.display()),
    })
}
