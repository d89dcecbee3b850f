use std::process::ExitCode;

use clap::Parser;

use brwre::cli::{execute, load_config, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("brwre {}: some checks failed (see summary.json)", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("brwre {}: {e}", cli.command.name());
            ExitCode::from(2)
        }
    }
}
