use std::fmt;
use std::path::PathBuf;

/// Failures mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable configuration, missing inputs, I/O failures: exit 1.
    Config(String),
    /// A sampler or trainer produced non-finite values: exit 2. The
    /// diagnostics file, when one was written, is named in the message.
    Numerical { message: String, diagnostics: Option<PathBuf> },
    /// `verify` found failing checks: exit 3.
    ChecksFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical { .. } => 2,
            CliError::ChecksFailed(_) => 3,
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError::Numerical {
            message: message.into(),
            diagnostics: None,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical { message, diagnostics } => {
                write!(f, "numerical error: {message}")?;
                if let Some(p) = diagnostics {
                    write!(f, " (diagnostics in {})", p.display())?;
                }
                Ok(())
            }
            CliError::ChecksFailed(names) => write!(f, "failed checks: {}", names.join(", ")),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dps_core::Error> for CliError {
    fn from(e: dps_core::Error) -> Self {
        use dps_core::Error as E;
        match e {
            E::NonFinite(_) | E::Diverged { .. } | E::SingularCovariance(_) => CliError::numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("I/O error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("CSV error: {e}"))
    }
}
