use std::process::ExitCode;

use saw_recon::cli::{execute, parse_args, ParseError};

fn main() -> ExitCode {
    let (cli, overrides) = match parse_args(std::env::args()) {
        Ok(parsed) => parsed,
        Err(ParseError::Clap(e)) => e.exit(),
        Err(ParseError::Override(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli, &overrides) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
