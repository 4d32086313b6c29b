use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags, config keys or parameter combinations.
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Run(#[from] muonscale::Error),

    #[error("config file: {0}")]
    ConfigFile(#[from] toml::de::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// `check` found this many failing invariants.
    #[error("{0} invariant check(s) failed")]
    ChecksFailed(usize),
}

impl HarnessError {
    pub fn usage(msg: impl Into<String>) -> Self {
        HarnessError::Usage(msg.into())
    }

    /// Process exit status: 2 usage, 3 divergence, 4 invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use muonscale::Error as E;
        match self {
            HarnessError::Usage(_) | HarnessError::ConfigFile(_) => 2,
            HarnessError::Run(E::Config(_) | E::Precondition(_)) => 2,
            HarnessError::Run(E::Divergence { .. }) => 3,
            HarnessError::Run(E::Invariant { .. }) => 4,
            _ => 1,
        }
    }
}
