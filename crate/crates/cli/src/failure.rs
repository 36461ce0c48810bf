//! Exit-code contract: 0 success, 1 internal error, 2 usage or input error.

use std::fmt;
use std::io::ErrorKind;

use dualsig::Error;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    /// Prefixes the message with what was being handled, keeping the code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Failure {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn code_of(err: &Error) -> u8 {
    match err {
        Error::Io(e) => match e.kind() {
            ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidData => 2,
            _ => 1,
        },
        Error::Class { source, .. } => code_of(source),
        // everything else describes bad input or parameters
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure {
            code: code_of(&err),
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::from(Error::Io(err))
    }
}
