use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = lineage_cli::Cli::parse();
    match lineage_cli::run(cli) {
        Ok(outcome) if outcome.warnings.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
