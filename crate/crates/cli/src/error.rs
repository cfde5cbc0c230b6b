use std::process::ExitCode;

use dgv_harness::HarnessError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed trajectory log: {0}")]
    Log(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("no run data in {0}")]
    NoRunData(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Log(_) | CliError::NoRunData(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl From<dgv_core::Error> for CliError {
    fn from(e: dgv_core::Error) -> Self {
        use dgv_core::Error as E;
        match e {
            E::InvalidConfig(m) => CliError::Config(m),
            E::Format(m) => CliError::Log(m),
            E::BadRatio(_) => CliError::Config(e.to_string()),
            E::EmptyCell => CliError::Invariant(e.to_string()),
            E::Io(io) => CliError::Io(io),
            other => CliError::Log(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Core(c) => c.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Log(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.into())
        } else {
            CliError::Log(e.to_string())
        }
    }
}
