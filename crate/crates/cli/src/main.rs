//! `volnet` command-line tool. Every invocation writes
//! `<out-dir>/<command>_manifest.json` recording arguments, configuration,
//! seeds and input/output hashes.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 numerical
//! failure (divergence, non-convergence).

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use manifest::Run;

/// Bad argument combinations that clap cannot express.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<volnet::Error>() {
        Some(
            volnet::Error::Divergence { .. }
            | volnet::Error::Convergence { .. }
            | volnet::Error::ArbitrageViolation { .. },
        ) => 3,
        _ => 2,
    }
}

fn dispatch(cli: &Cli, run: &mut Run) -> anyhow::Result<()> {
    let hp = commands::load_config(cli.config.as_deref(), run)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, run),
        Command::Fit(a) => commands::fit(a, hp, run),
        Command::Predict(a) => commands::predict(a, run),
        Command::Evaluate(a) => commands::evaluate(a, run),
        Command::CheckArbitrage(a) => commands::check_arbitrage(a, run),
        Command::Density(a) => commands::density(a, run),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut run = Run::new(cli.out_dir.clone(), cli.seed);
    let result = dispatch(&cli, &mut run);
    let (code, status) = match &result {
        Ok(()) => (0, "ok".to_string()),
        Err(e) => (exit_code(e), format!("error: {e:#}")),
    };
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    if let Err(e) = run.finish(cli.command.name(), argv, code as i32, status) {
        eprintln!("error: could not write run manifest: {e:#}");
        return ExitCode::from(code.max(2));
    }
    ExitCode::from(code)
}
