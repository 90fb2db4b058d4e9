//! Library half of the command-line front end: the tensor container
//! format, the resolved run configuration, and the three workflows
//! (quantize, ablate, pool). The binary in `main.rs` only parses
//! arguments and maps errors to exit codes.

pub mod commands;
pub mod config;
pub mod format;

/// Process exit codes: 2 for input/parse failures, 3 for numeric
/// failures, 1 for anything else.
#[derive(Debug)]
pub enum CliError {
    /// Missing, malformed, or inconsistent inputs.
    Parse(String),
    /// Numerical failure (singular metric).
    Numeric(String),
    /// Everything else.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Numeric(m) | CliError::Other(m) => m,
        }
    }
}

impl From<tarq::TarqError> for CliError {
    fn from(e: tarq::TarqError) -> Self {
        match e {
            tarq::TarqError::SingularMetric { .. } => CliError::Numeric(e.to_string()),
            tarq::TarqError::Io(_) | tarq::TarqError::BadSpec(_) => CliError::Parse(e.to_string()),
            tarq::TarqError::InsufficientCorpus { .. } | tarq::TarqError::EmptyUtterance => {
                CliError::Parse(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<format::FormatError> for CliError {
    fn from(e: format::FormatError) -> Self {
        CliError::Parse(e.to_string())
    }
}
