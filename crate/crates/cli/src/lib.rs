//! Batch front end: instance files, generators, commands and the acceptance
//! corpus.

pub mod commands;
pub mod format;
pub mod generate;
pub mod oracle;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] endolift::Error),
}

impl CliError {
    /// 2 for unreadable input, 3 for violated preconditions, 4 for failed
    /// verifications.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Io(_) => 2,
            CliError::Core(e) if e.is_verification() => 4,
            CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
