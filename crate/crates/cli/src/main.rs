use std::process::ExitCode;

use clap::Parser;
use dgv_cli::app::{run, Cli};

fn main() -> ExitCode {
    let level = std::env::var("DGV_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).init();

    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dgv: {e}");
            e.to_exit()
        }
    }
}
