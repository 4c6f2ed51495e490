use thiserror::Error;

/// Failure classes of the command-line tool, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Analysis(_) => 4,
        }
    }

    /// Maps a library error raised while analysing inputs.
    pub fn analysis(err: genbayes::Error) -> Self {
        match err {
            genbayes::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Analysis(other.to_string()),
        }
    }

    /// Maps a library error raised while running a configured experiment.
    pub fn run(err: genbayes::Error) -> Self {
        match err {
            genbayes::Error::Contract(m) => CliError::Config(m),
            genbayes::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Analysis(other.to_string()),
        }
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}
