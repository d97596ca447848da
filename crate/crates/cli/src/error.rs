use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] mvreins_core::Error),

    #[error("not certified: {0}")]
    NotCertified(String),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numerical(_) | CliError::NotCertified(_) => ExitCode::from(3),
            CliError::Io { .. } => ExitCode::from(1),
        }
    }
}
