mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::{PartialFailure, UsageError};

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<PartialFailure>().is_some() {
        return 3;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<netlocal::Error>() {
            return match e {
                netlocal::Error::Io(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli.command, &cli.out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
