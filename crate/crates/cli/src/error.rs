use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),

    /// A numerical routine refused its input; exit code 3.
    #[error("{0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] chainbound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use chainbound::Error as E;
        match self {
            Self::Numeric(_) => 3,
            Self::Core(
                E::Domain(_)
                | E::NonConvergence(_)
                | E::Unbounded(_)
                | E::NoOnset { .. }
                | E::SizeLimit { .. }
                | E::NotSpd(_),
            ) => 3,
            _ => 2,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
