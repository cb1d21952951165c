use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Numerical(#[from] gpctc_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("reproduction thresholds failed:\n{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Numerical(gpctc_core::Error::Io(_))
            | CliError::Io(_)
            | CliError::NotFound(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Threshold(_) => EXIT_THRESHOLD,
        }
    }
}
