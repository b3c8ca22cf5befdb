use thiserror::Error;

use meanfield_core::Error as CoreError;

/// Failure of a CLI invocation, mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// The experiment file does not match the schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// A configured cap would be exceeded.
    #[error("resource limit: {0}")]
    Resource(String),
    /// The task failed numerically, an invariant was violated, or an input
    /// file is missing.
    #[error("{0}")]
    Task(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Task(_) => 4,
        }
    }

    pub fn schema(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Schema(format!("{field}: {msg}"))
    }

    pub fn task(msg: impl std::fmt::Display) -> Self {
        CliError::Task(msg.to_string())
    }

    /// Core errors raised while building inputs from the spec; invalid
    /// parameters are schema errors there.
    pub fn from_build(field: &str, e: CoreError) -> Self {
        match e {
            CoreError::Invalid(m) | CoreError::Domain(m) => CliError::schema(field, m),
            other => other.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Resource(m) => CliError::Resource(m),
            other => CliError::Task(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Task(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Task(format!("csv error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Task(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
