//! Error types.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown datacenter: {0}")]
    UnknownDatacenter(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("invalid failure schedule: {0}")]
    FailureSchedule(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("participant set is empty")]
    EmptyParticipants,
    #[error("unknown datacenter: {0}")]
    UnknownDatacenter(String),
}
