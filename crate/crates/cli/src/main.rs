//! `mmgibbs`: datasets → training → sampling → evaluation from one binary.
//!
//! Every command takes `--config <json>` plus flags that override individual
//! fields, echoes the fully-resolved config next to its outputs (re-running
//! with only that file reproduces the outputs bit-exactly), and reports
//! failures as one machine-parsable stderr line with a class-specific exit
//! code: 2 config, 3 io, 4 numeric, 5 capability.

mod args;
mod commands;
mod errors;
mod model_io;
mod plumbing;
mod svg;
mod verify;

use clap::Parser;

use crate::args::{Cli, Cmd};
use crate::errors::CliError;

/// Honor RUN_THREADS before any parallel work starts.
fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RUN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| CliError::Config(format!("RUN_THREADS=`{raw}` is not a thread count")))?;
    if n == 0 {
        return Err(CliError::Config("RUN_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("RUN_THREADS: {e}")))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::GenerateData(a) => commands::run_generate(a),
        Cmd::Train(a) => commands::run_train(a),
        Cmd::Sample(a) => commands::run_sample(a),
        Cmd::SampleMultilevel(a) => commands::run_multilevel(a),
        Cmd::EvalMmd(a) => commands::run_mmd(a),
        Cmd::PosteriorGrid(a) => commands::run_grid(a),
        Cmd::VerifyIdentities(a) => commands::run_verify(a),
        Cmd::Plot(a) => commands::run_plot(a),
    }
}

fn main() {
    let result = init_threads().and_then(|()| {
        let cli = Cli::parse();
        run(&cli)
    });
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
