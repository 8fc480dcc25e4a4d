use std::fmt;

use todbias::{BackendError, Error};

pub const OK: u8 = 0;
pub const OTHER: u8 = 1;
pub const USAGE: u8 = 2;
pub const PARTIAL: u8 = 3;
pub const UNREACHABLE: u8 = 4;
pub const VALIDATION: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: VALIDATION,
            message: message.into(),
        }
    }

    pub fn unreachable(e: &Error) -> Self {
        CliError {
            code: UNREACHABLE,
            message: format!("model endpoint unreachable: {e}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Backend(BackendError::Transport { .. } | BackendError::Timeout { .. }) => UNREACHABLE,
            e if e.is_validation() => VALIDATION,
            Error::Io { .. } => VALIDATION,
            _ => OTHER,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}
