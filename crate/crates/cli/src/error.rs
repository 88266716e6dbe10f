use pedestrian_intent::pipeline::PipelineError;
use pedestrian_intent::stdensenet::NetError;
use pedestrian_intent::tracking::TrackingError;

/// Failure of a command, carrying its process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
            CliError::Verification(_) => 5,
        }
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(io) => CliError::Io(io.to_string()),
            NetError::MissingForward(_) => CliError::Internal(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrackingError> for CliError {
    fn from(e: TrackingError) -> Self {
        match e {
            TrackingError::MatrixSqrt { .. } | TrackingError::SingularInnovation => CliError::Internal(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(io) => CliError::Io(io.to_string()),
            PipelineError::Net(n) => n.into(),
            PipelineError::Tracking(t) => t.into(),
            PipelineError::WindowNotReady { .. } => CliError::Internal(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
