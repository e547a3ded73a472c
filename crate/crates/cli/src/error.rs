use thiserror::Error;

/// Failures of a CLI run, each mapped to an exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// A numerical or sampling failure of the model itself.
    #[error("model failure: {0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) => 2,
            _ => 1,
        }
    }
}

impl From<poissonize_core::Error> for CliError {
    fn from(e: poissonize_core::Error) -> Self {
        use poissonize_core::Error as E;
        match e {
            E::Parameter(_) | E::Shape(_) | E::Domain(_) | E::Input(_) | E::UnsupportedOrder(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(msg) => CliError::Io(std::io::Error::other(msg)),
            _ => CliError::Model(e.to_string()),
        }
    }
}
