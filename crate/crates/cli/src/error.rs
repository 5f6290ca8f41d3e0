use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training failed: {0}")]
    Training(#[source] movedetect::Error),

    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Output(_) => 1,
        }
    }
}

pub fn output(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}
