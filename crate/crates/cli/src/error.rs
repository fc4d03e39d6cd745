use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} check(s) failed")]
    Verify(usize),
    #[error(transparent)]
    Core(#[from] lce_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                lce_core::Error::Io { .. } | lce_core::Error::Image { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            },
        }
    }
}
