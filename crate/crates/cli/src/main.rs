mod cmd;

use std::process::ExitCode;

use clap::Parser;

use cmd::{Cli, EXIT_DATA, EXIT_STATE, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .format_timestamp(None)
        .init();
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<sise_core::Error>() {
                Some(err) if err.is_state_error() => EXIT_STATE,
                Some(_) => EXIT_DATA,
                None if e.downcast_ref::<cmd::UsageError>().is_some() => EXIT_USAGE,
                None => EXIT_DATA,
            };
            ExitCode::from(code)
        }
    }
}
