//! Command-line front end for the changepoint detector and its experiments.

pub mod config;
pub mod run;

pub use config::{ModelKind, RunConfig};

use svocd::Error;

/// Process exit code for a failed run: 2 for configuration errors, 3 for data errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Unsupported(_) | Error::Dimension { .. } => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) => 3,
        _ => 1,
    }
}
