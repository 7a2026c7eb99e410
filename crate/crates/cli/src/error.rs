use std::fmt;

use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or parameters. Exit code 1.
    Invalid(String),
    /// Failure while reading data or running a stage. Exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, msg) = match self {
            CliError::Invalid(m) => ("validation", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({ "error": kind, "message": msg, "exit_code": self.exit_code() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

pub trait Context<T> {
    fn invalid(self, what: &str) -> Result<T, CliError>;
    fn runtime(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Invalid(format!("{what}: {e}")))
    }

    fn runtime(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}
