//! Command-line front end over the archive crates.

pub mod cli;
pub mod commands;
pub mod config;
pub mod demo;
pub mod error;

use std::io::Write;

use cli::{Cli, Command};
use config::Settings;
use error::CliError;

/// Runs one parsed invocation. Reports go to `out`; serve's startup lines
/// go to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Plan(a) => commands::plan(&settings, a, out),
        Command::Collect(a) => commands::collect(&settings, a, out),
        Command::Simulate(a) => commands::simulate(&settings, a, out),
        Command::Experiment(a) => commands::experiment(&settings, a, out),
        Command::Analyze(a) => commands::analyze(&settings, a, out),
        Command::Train(a) => commands::train(&settings, a, out),
        Command::Evaluate(a) => commands::evaluate(&settings, a, out),
        Command::Serve(a) => commands::serve(&settings, a, err),
        Command::Export(a) => commands::export(&settings, a, out),
        Command::Import(a) => commands::import(&settings, a, out),
        Command::Demo(a) => demo::demo(&settings, a, out),
    }
}
