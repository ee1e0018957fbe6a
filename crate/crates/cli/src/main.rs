use std::process::ExitCode;

use clap::Parser;
use derivdoa_cli::{error::classify, error::error_line, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(classify(&e).0 as u8)
        }
    }
}
