//! The `tridenoise` command line: `train`, `denoise`, `eval`, `synth`, `init`.

use std::ffi::OsString;
use std::io::{self, Write};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use tridenoise::{Error, Result};

pub mod args;
pub mod commands;
pub mod config;

pub use args::Cli;
pub use config::{Corpus, Job, ModelOverrides, Precision, RunConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Process exit status for a failed run.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnsupportedMode(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_IO,
    }
}

/// Executes a validated configuration, writing progress to `log`.
pub fn execute(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    rc.validate()?;
    match (&rc.job, rc.precision) {
        (Job::Train { .. }, Precision::F32) => commands::train::<f32>(rc, log),
        (Job::Train { .. }, Precision::F64) => commands::train::<f64>(rc, log),
        (Job::Denoise { .. }, Precision::F32) => commands::denoise::<f32>(rc, log),
        (Job::Denoise { .. }, Precision::F64) => commands::denoise::<f64>(rc, log),
        (Job::Eval { .. }, Precision::F32) => commands::eval::<f32>(rc, log),
        (Job::Eval { .. }, Precision::F64) => commands::eval::<f64>(rc, log),
        (Job::Synth { .. }, _) => commands::synth(rc, log),
        (Job::Init { .. }, _) => commands::init(rc, log),
    }
}

pub fn run<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let rc = RunConfig::from_cli(cli);
    let stdout = io::stdout();
    match execute(&rc, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let (Error::Numeric(_), Job::Train { .. }, Some(ck)) = (&e, &rc.job, &rc.checkpoint) {
                eprintln!("last good checkpoint kept at {}", ck.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
