use std::fmt::Display;

use popcorn::Error;

pub const CONFIG: u8 = 1;
pub const DATA: u8 = 2;
pub const RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => CONFIG,
            Error::NonFiniteGradient { .. } => RUNTIME,
            _ => DATA,
        };
        Self::new(code, e)
    }
}

/// Attach the failing path to an I/O error.
pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::new(DATA, format!("{}: {e}", path.display()))
}
