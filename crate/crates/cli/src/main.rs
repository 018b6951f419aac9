use std::process::ExitCode;

use clap::Parser;
use magc_cli::args::Cli;

fn main() -> ExitCode {
    let argv = match magc_cli::config::expand_args(std::env::args_os()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("usage error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match magc_cli::run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
