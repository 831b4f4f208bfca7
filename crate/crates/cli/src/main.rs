use std::process::ExitCode;

use clap::Parser;
use lpsde_cli::{execute, Cli, Config};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match Config::from_cli(&cli).and_then(|cfg| execute(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lpsde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
