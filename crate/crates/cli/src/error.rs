use std::fmt;
use std::process::ExitCode;

use n2n4m::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numeric,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numeric => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Kind::Config => "E_CONFIG",
            Kind::Data => "E_DATA",
            Kind::Numeric => "E_NUMERIC",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for CliError {
    /// One line: `error[<TAG>]: <diagnostic>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}", self.kind.tag(), flat)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) | Error::Json(_) => Kind::Config,
            Error::Numeric(_) => Kind::Numeric,
            Error::Data(_) | Error::Shape(_) | Error::Checkpoint { .. } | Error::Io { .. } | Error::Csv { .. } => {
                Kind::Data
            }
        };
        Self { kind, message: e.to_string() }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
