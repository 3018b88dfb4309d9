use triple_s::formats::FormatError;
use triple_s::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
    #[error("{0}")]
    Corrupt(String),
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
    pub const CORRUPT: u8 = 5;

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => Self::USAGE,
            CliError::Io(_) => Self::IO,
            CliError::Divergence { .. } => Self::DIVERGENCE,
            CliError::Corrupt(_) => Self::CORRUPT,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Checkpoint(_) => CliError::Corrupt(e.to_string()),
            FormatError::Synth(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergenceDetected { iteration, detail, .. } => CliError::Divergence { iteration, detail },
            TrainError::ConfigInvalid(_) | TrainError::DatasetEmpty => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}
