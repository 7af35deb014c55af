use thiserror::Error;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<dynpat::Error> for CliError {
    fn from(e: dynpat::Error) -> Self {
        match e {
            dynpat::Error::Argument(m) => CliError::Config(m),
            dynpat::Error::Json(e) => CliError::Config(e.to_string()),
            e @ dynpat::Error::Solver { .. } => CliError::Solver(e.to_string()),
            dynpat::Error::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
