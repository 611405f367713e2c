//! Command-line harness: simulate fields, estimate parameters, run Monte
//! Carlo studies and emit covariance tables.

pub mod commands;
pub mod config;

use gmf_heat::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Format(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::Numeric { .. } | Error::DegenerateRatio { .. } | Error::Resource(_) | Error::Internal(_) => EXIT_NUMERIC,
    }
}
