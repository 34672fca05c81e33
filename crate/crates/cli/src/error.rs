use manifold_cca::CcaError;

/// Failures of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    pub(crate) fn config(e: CcaError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<CcaError> for CliError {
    fn from(e: CcaError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
