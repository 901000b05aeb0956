//! `uniformid` command-line front end and local HTTP service.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | usage error (unknown subcommand or flag, bad flag value) |
//! | 3 | invalid configuration |
//! | 4 | invalid input (schema, contract or decode failure) |
//! | 5 | not found |
//! | 6 | integrity failure (model registry, digest mismatch, stale result) |
//! | 7 | training or evaluation failure (including leakage and fold errors) |
//! | 8 | filesystem error |
//! | 9 | detector failure |

use std::ffi::OsString;

use clap::Parser;
use uniformid_core::Error;

mod args;
mod commands;
pub mod server;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INPUT: i32 = 4;
pub const EXIT_NOT_FOUND: i32 = 5;
pub const EXIT_INTEGRITY: i32 = 6;
pub const EXIT_TRAINING: i32 = 7;
pub const EXIT_IO: i32 = 8;
pub const EXIT_DETECTOR: i32 = 9;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Schema(_) | Error::Contract(_) | Error::Decode(_) => EXIT_INPUT,
        Error::NotFound(_) => EXIT_NOT_FOUND,
        Error::Registry(_) | Error::Digest { .. } | Error::StaleResult { .. } => EXIT_INTEGRITY,
        Error::Training(_) | Error::Leakage(_) | Error::Fold(_) | Error::Capacity { .. } => EXIT_TRAINING,
        Error::Io { .. } => EXIT_IO,
        Error::Detector { .. } => EXIT_DETECTOR,
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
