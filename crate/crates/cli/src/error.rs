use std::path::PathBuf;

use thiserror::Error;

/// Exit code for a malformed command line or an I/O failure.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for input that parses but violates the model's invariants.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for a solver or oracle that failed numerically.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Solver(#[from] capmin::Error),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("solver stopped early: {0}")]
    Stopped(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use capmin::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Csv(_) => EXIT_USAGE,
            CliError::Parse { .. } | CliError::Invalid(_) => EXIT_VALIDATION,
            CliError::Stopped(_) => EXIT_NUMERICAL,
            CliError::Solver(e) => match e {
                E::InvalidArgument(_)
                | E::InvalidProcess(_)
                | E::DimensionMismatch(_)
                | E::BudgetExceeded { .. }
                | E::OutcomeOutOfRange { .. }
                | E::OracleTooLarge(_) => EXIT_VALIDATION,
                E::Overflow(_)
                | E::NewtonNotConverged { .. }
                | E::IllConditioned { .. }
                | E::KktNotMet { .. }
                | E::OracleNotCertified { .. }
                | E::OracleDisagreement { .. } => EXIT_NUMERICAL,
            },
        }
    }
}
