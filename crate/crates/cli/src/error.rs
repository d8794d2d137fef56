//! CLI errors and their exit codes.

use std::path::PathBuf;

use thiserror::Error;
use topoprior::ErrorKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{} not found; run `topoprior {run}` first", .path.display())]
    MissingArtifact { path: PathBuf, run: String },
    #[error(transparent)]
    Core(#[from] topoprior::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Contract | ErrorKind::Io => 3,
                ErrorKind::Divergence => 4,
            },
        }
    }
}
