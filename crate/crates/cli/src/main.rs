mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Evaluate(cmd) = &cli.command {
        if !cmd.data.is_given() {
            Cli::command()
                .error(
                    ErrorKind::MissingRequiredArgument,
                    "evaluate needs a dataset: --images and --labels, or --cifar",
                )
                .exit();
        }
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Quantize(cmd) => commands::quantize(cmd, &mut out),
        Command::Inspect(cmd) => commands::inspect(cmd, &mut out),
        Command::Decode(cmd) => commands::decode(cmd, &mut out),
        Command::Evaluate(cmd) => commands::evaluate_cmd(cmd, &mut out),
        Command::Sweep(cmd) => commands::sweep_cmd(cmd, &mut out),
        Command::CsdAnalyze(cmd) => commands::csd_analyze(cmd, &mut out),
    }
    .and_then(|()| out.flush().map_err(Into::into));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
