mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::ConfigMap;
use survbank::Error;

/// 0 success, 1 validation failure, 2 I/O failure.
fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Io(_) => ExitCode::from(2),
        Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(cli: Cli) -> survbank::Result<()> {
    let cfg = ConfigMap::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => commands::simulate(args, &cfg),
        Command::TrainImputer(args) => commands::train_imputer(args, &cfg),
        Command::Impute(args) => commands::impute(args, &cfg),
        Command::ImputeEval(args) => commands::impute_eval_cmd(args, &cfg),
        Command::TrainSurvival(args) => commands::train_survival(args, &cfg),
        Command::Evaluate(args) => commands::evaluate(args, &cfg),
        Command::CrossValidate(args) => commands::cross_validate_cmd(args, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
