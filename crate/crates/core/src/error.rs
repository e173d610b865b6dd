use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("construction error: {0}")]
    Construction(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("kind error: {0}")]
    Kind(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    /// True for failures of a checked identity, as opposed to bad input.
    pub fn is_verification(&self) -> bool {
        matches!(self, Error::Verification(_) | Error::Internal(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
