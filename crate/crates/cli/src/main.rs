//! `observa`: record, simulate, replay, verify and export biosignal sessions.

mod config;
mod error;
mod export;
mod record;
mod replay;
mod simulate;
mod task_run;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "observa", version, about = "Multimodal biosignal recorder and session verifier")]
struct Cli {
    /// JSON file of option defaults; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Record(record::RecordArgs),
    Simulate(simulate::SimulateArgs),
    Replay(replay::ReplayArgs),
    Verify(verify::VerifyArgs),
    Export(export::ExportArgs),
    TaskRun(task_run::TaskRunArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OBSERVA_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail(&CliError::usage(first.trim_start_matches("error: ")));
        }
    };
    let config = cli.config.as_deref();
    let result = match &cli.command {
        Command::Record(a) => record::run(a, config),
        Command::Simulate(a) => simulate::run(a, config),
        Command::Replay(a) => replay::run(a, config),
        Command::Verify(a) => verify::run(a, config),
        Command::Export(a) => export::run(a, config),
        Command::TaskRun(a) => task_run::run(a, config),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    log::debug!("{e}");
    eprintln!("{}", e.line());
    ExitCode::from(e.kind.exit_code() as u8)
}
