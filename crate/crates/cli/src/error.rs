use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<revpf_core::Error> for CliError {
    fn from(e: revpf_core::Error) -> Self {
        use revpf_core::Error as E;
        match e {
            E::Solver { .. } | E::Simulation { .. } | E::Estimation(_) => CliError::Solver(e.to_string()),
            E::Domain(_) | E::UnsupportedParameter(_) | E::Argument(_) | E::Format(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
