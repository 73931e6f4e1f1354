use std::process::ExitCode;

use bdlab_cli::{run_cli, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cli(&cli) {
        Ok(report) if report.passed() => ExitCode::SUCCESS,
        Ok(report) => {
            let failed: Vec<&str> = report
                .flags
                .iter()
                .filter(|(_, v)| !**v)
                .map(|(k, _)| k.as_str())
                .collect();
            eprintln!("failed checks: {}", failed.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
