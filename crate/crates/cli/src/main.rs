mod args;
mod commands;
mod config;

use std::io::IsTerminal;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Exit status for an error: 2 when any cause is an I/O failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<pleas_core::Error>().is_some_and(pleas_core::Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

/// The error chain on one line, skipping causes the previous message
/// already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn init_logging(filter: &str) -> anyhow::Result<()> {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .map_err(|e| anyhow::anyhow!("invalid log level '{filter}': {e}"))?;
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .without_time()
        .init();
    Ok(())
}

fn run(argv: Vec<String>) -> Result<(), (anyhow::Error, Option<clap::Error>)> {
    let argv = config::apply_config(argv).map_err(|e| (e, None))?;
    let cli = Cli::try_parse_from(argv).map_err(|e| (anyhow::anyhow!("usage"), Some(e)))?;
    init_logging(&cli.global.log_level).map_err(|e| (e, None))?;
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err((anyhow::anyhow!("--jobs must be at least 1"), None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| (anyhow::Error::new(e), None))?;
    }
    commands::dispatch(&cli).map_err(|e| (e, None))
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((_, Some(clap_err))) => {
            let _ = clap_err.print();
            if matches!(clap_err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err((err, None)) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
