/// Failures with stable exit codes: 2 for configuration problems, 3 for
/// missing input, 1 for anything that goes wrong while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad config: {0:#}")]
    Config(anyhow::Error),
    #[error("missing input: {0:#}")]
    Input(anyhow::Error),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn input(msg: impl std::fmt::Display) -> Self {
        CliError::Input(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<apce_core::ApceError> for CliError {
    fn from(e: apce_core::ApceError) -> Self {
        match e {
            apce_core::ApceError::InvalidArgument(_) => CliError::Config(e.into()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
