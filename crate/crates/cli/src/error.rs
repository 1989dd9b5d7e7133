use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input files and flags.
    #[error("{0}")]
    Input(String),

    /// The fit itself failed numerically.
    #[error("numeric failure: {0}")]
    Numeric(missnet::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 3,
            CliError::Input(_) | CliError::Io { .. } => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<missnet::Error> for CliError {
    fn from(e: missnet::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e)
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_input_from_numeric() {
        assert_eq!(CliError::from(missnet::Error::InvalidInput("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(missnet::Error::NonFinite("x".into())).exit_code(), 3);
        let io = CliError::io(Path::new("f"), std::io::Error::other("gone"));
        assert_eq!(io.exit_code(), 2);
    }
}
