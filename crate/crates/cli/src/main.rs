use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = xinfid_cli::Cli::parse();
    ExitCode::from(xinfid_cli::run(cli))
}
