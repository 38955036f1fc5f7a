use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    /// A numerical failure or a failed audit, named.
    #[error("{0}")]
    Failure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ufd_core::Error> for CliError {
    fn from(e: ufd_core::Error) -> Self {
        match e {
            ufd_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Failure(_) | CliError::Io(_) => EXIT_FAILURE,
        }
    }
}
