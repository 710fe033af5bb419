use std::fmt;

/// Failures surfaced to the shell. `Usage` exits 1 (bad arguments, missing or
/// malformed files, infeasible configurations); `Numerical` exits 2 (the
/// computation itself failed: SVD breakdown, divergence, non-finite values).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<tdc_core::Error> for CliError {
    fn from(e: tdc_core::Error) -> Self {
        use tdc_core::Error as E;
        match e {
            E::SvdFailed | E::Diverged { .. } | E::NonFinite(_) | E::ZeroNormReference => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
