use adtn_core::checkpoint::CheckpointError;
use adtn_core::compress::CompressError;
use adtn_core::data::DataError;
use adtn_core::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Failed(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Failed(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Data(e.to_string()),
            other => CliError::Data(format!("checkpoint: {other}")),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Data(d) => d.into(),
            NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        match e {
            CompressError::Nn(n) => n.into(),
            CompressError::Data(d) => d.into(),
            CompressError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            CompressError::Config(_) | CompressError::UnknownLayer(_) | CompressError::NoWeight(_) | CompressError::AlreadyCompressed(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(format!("csv: {e}"))
    }
}
