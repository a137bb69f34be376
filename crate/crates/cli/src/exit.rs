//! Process exit codes and the error type that carries them.

use std::fmt::Display;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Config = 1,
    Data = 2,
    Backend = 3,
    FailureCeiling = 4,
    /// Conventional 128 + SIGINT.
    Interrupted = 130,
}

pub struct CliError {
    pub code: Code,
    pub error: anyhow::Error,
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub trait WithCode<T> {
    fn code(self, code: Code) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: Code) -> CliResult<T> {
        self.map_err(|e| CliError {
            code,
            error: e.into(),
        })
    }
}

pub fn fail<T>(code: Code, msg: impl Display) -> CliResult<T> {
    Err(CliError {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}
