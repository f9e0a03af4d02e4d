use std::process::ExitCode;

/// Failures surfaced by the command line, each with a fixed exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed, missing or inconsistent input. Exit 2.
    #[error("{0}")]
    Input(String),
    /// Too many calibration fits failed to converge. Exit 3.
    #[error("{unconverged} of {total} items did not converge (allowed fraction {allowed})")]
    NotConverged {
        unconverged: usize,
        total: usize,
        allowed: f64,
    },
    /// The exposure target cannot be met in the gamma search range. Exit 4.
    #[error("{0}")]
    Unreachable(banditcat::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(banditcat::Error),
    #[error("{0}")]
    Runtime(String),
}

impl From<banditcat::Error> for CliError {
    fn from(e: banditcat::Error) -> Self {
        use banditcat::Error as E;
        match e {
            E::TargetUnreachable { .. } => CliError::Unreachable(e),
            E::InvalidParams(_)
            | E::InvalidGrid(_)
            | E::InvalidPrior(_)
            | E::InvalidConfig(_)
            | E::InvalidSurface { .. }
            | E::EmptyBank
            | E::DuplicateItem(_)
            | E::UnknownItemType(_)
            | E::NoDonor(_)
            | E::EmptyHistory
            | E::BankExhausted(_)
            | E::MissingScore(_)
            | E::OutOfRange(_)
            | E::InvalidShape { .. }
            | E::Malformed(_)
            | E::Io(_) => CliError::Input(e.to_string()),
            other => CliError::Engine(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::NotConverged { .. } => 3,
            CliError::Unreachable(_) => 4,
            CliError::Output { .. } | CliError::Engine(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
