use std::error::Error as _;
use std::path::PathBuf;

use ldr_core::LdrError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Ingestion(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] LdrError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 usage, 3 ingestion, 4 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Ingestion(_) | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                LdrError::Parameter(_) | LdrError::Domain(_) => 2,
                LdrError::Numerical(_)
                | LdrError::Convergence(_)
                | LdrError::Optimization { .. }
                | LdrError::Sweep { .. }
                | LdrError::Invariant(_) => 4,
                _ => 3,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "ingestion",
            _ => "numerical",
        }
    }

    /// One `error[kind]: message` line, then the cause chain.
    pub fn report(&self) {
        eprintln!("error[{}]: {self}", self.kind());
        let mut cause = self.source();
        while let Some(c) = cause {
            eprintln!("  caused by: {c}");
            cause = c.source();
        }
    }
}
