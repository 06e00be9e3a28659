use std::process::ExitCode;

use clap::Parser;
use clusterjack_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match clusterjack_cli::run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
