//! Command-line front end: `fit`, `simulate` and `placebo`.

pub mod args;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod fit;
pub mod input;
pub mod model;

use args::{Cli, Command};
use error::Result;

/// Runs one parsed command and returns what should go to standard output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fit(a) => fit::run_fit(a),
        Command::Simulate(a) => experiment::run_simulate(a),
        Command::Placebo(a) => experiment::run_placebo_cmd(a),
    }
}
