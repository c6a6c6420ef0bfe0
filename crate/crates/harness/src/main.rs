use std::process::ExitCode;

use conceptree_harness::cli;
use conceptree_harness::config::expand_config;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = expand_config(std::env::args_os().collect()).and_then(cli::run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
