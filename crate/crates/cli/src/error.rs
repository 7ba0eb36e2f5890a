use percodrift::Error as CoreError;
use thiserror::Error;

/// Everything a subcommand can fail with, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("identity check failed: {0}")]
    Check(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("budget exhausted: {0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidInput(_) => CliError::Config(msg),
            CoreError::Io(_) | CoreError::Json(_) | CoreError::Csv(_) => CliError::Io(msg),
            // A box or sample budget that was too small to certify a value.
            CoreError::BudgetExhausted { .. }
            | CoreError::BracketTooWide { .. }
            | CoreError::NonConvergence(_)
            | CoreError::DegenerateEstimate(_) => CliError::Budget(msg),
            CoreError::IdentityViolation { .. } | CoreError::Unresolved(_) => CliError::Check(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
