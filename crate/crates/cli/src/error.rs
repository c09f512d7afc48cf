use std::path::PathBuf;

use evcast_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing or stale artifacts: {0}")]
    MissingArtifact(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub const EXIT_FAILURE: u8 = 1;
    pub const EXIT_CONFIG: u8 = 2;
    pub const EXIT_MISSING: u8 = 3;
    pub const EXIT_DIVERGED: u8 = 4;

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => Self::EXIT_CONFIG,
            CliError::MissingArtifact(_) => Self::EXIT_MISSING,
            CliError::Core(CoreError::Diverged { .. }) => Self::EXIT_DIVERGED,
            CliError::Core(CoreError::Schema(_)) => Self::EXIT_CONFIG,
            _ => Self::EXIT_FAILURE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Config("x".into()).exit_code(),
            CliError::MissingArtifact("x".into()).exit_code(),
            CliError::Core(CoreError::Diverged { epoch: 3, loss: f64::NAN }).exit_code(),
            CliError::io("p", std::io::Error::other("x")).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }
}
