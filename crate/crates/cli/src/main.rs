mod args;
mod commands;
mod io;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::io::CliError;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", CliError::usage(msg.trim()).to_json());
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
