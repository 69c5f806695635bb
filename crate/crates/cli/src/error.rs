use std::fmt;

use serde::Serialize;

use injury_forecast::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Every configuration problem found.
    Config(Vec<String>),
    Core(Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(Error::Config(_)) => "config",
            CliError::Core(Error::Training(_)) => "training",
            CliError::Core(Error::Io(_)) => "io",
            CliError::Core(_) => "data",
        }
    }

    /// 2 configuration, 3 data (including I/O), 4 training.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "training" => 4,
            _ => 3,
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            CliError::Config(v) => v.clone(),
            CliError::Core(e) => vec![e.to_string()],
        }
    }

    /// One-line JSON record written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            schema_version: u32,
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            kind: &'a str,
            exit_code: i32,
            messages: Vec<String>,
        }
        serde_json::to_string(&Record {
            schema_version: crate::artifacts::SCHEMA_VERSION,
            error: Inner {
                kind: self.kind(),
                exit_code: self.exit_code(),
                messages: self.messages(),
            },
        })
        .expect("error record serialises")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.messages().join("; "))
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}
