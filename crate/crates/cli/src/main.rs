mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{write_atomic, Envelope};

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LTS_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::field("LTS_THREADS", format!("must be a positive integer (got `{raw}`)")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("starting {n} worker threads: {e}")))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = ExperimentConfig::resolve(cli.command.name(), cli.command.tree(), &cli.common)?;
    let result = commands::run(&cli.command, &cfg)?;
    let json = Envelope::new(&cfg, result).to_json()?;
    match &cfg.output_path {
        Some(path) => write_atomic(path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lts {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
