use stressmon_core::dataset::DatasetError;
use stressmon_core::model::ModelError;
use stressmon_server::ServiceError;
use stressmon_sim::{EndpointError, ProfileError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{context}: {message}")]
    Input { context: String, message: String },
    #[error("{0}")]
    Service(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Simulation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn input(context: impl Into<String>, e: impl std::fmt::Display) -> Self {
        CliError::Input {
            context: context.into(),
            message: e.to_string(),
        }
    }

    /// Process exit code; 2 is left to usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 3,
            CliError::Input { .. } => 4,
            CliError::Service(_) => 5,
            CliError::Model(_) => 6,
            CliError::Simulation(_) => 7,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Internal(_) => "internal",
            CliError::Config(_) => "config",
            CliError::Input { .. } => "input",
            CliError::Service(_) => "service",
            CliError::Model(_) => "model",
            CliError::Simulation(_) => "simulation",
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(m) => CliError::Config(m),
            other => CliError::Service(other.to_string()),
        }
    }
}

impl From<EndpointError> for CliError {
    fn from(e: EndpointError) -> Self {
        CliError::Service(e.to_string())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Profile(p) => p.into(),
            SimError::Options(m) => CliError::Config(m),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::input("dataset", e)
    }
}
