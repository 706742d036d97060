use std::process::ExitCode;

use clap::Parser;
use ddsplit::cli::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = ddsplit::solver::init_threads_from_env() {
        log::debug!("worker pool capped at {n} threads");
    }
    let cli = Cli::parse();
    let code = execute(cli, &mut std::io::stdout().lock());
    ExitCode::from(code as u8)
}
