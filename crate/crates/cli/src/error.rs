use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] mfsde::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config kind `{found}` does not match subcommand `{expected}`")]
    KindMismatch { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, CliError>;
