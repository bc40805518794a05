//! Exit-code contract: 0 success, 2 configuration error, 3 runtime error.

use crate::config::ConfigError;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn report(&self) -> String {
        match self {
            CliError::Config(e) => format!("config error: {e}"),
            CliError::Runtime(e) => format!("error: {e:#}"),
        }
    }
}
