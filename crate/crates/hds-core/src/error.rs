use thiserror::Error;

use crate::tree::NodeId;

/// Errors surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("KL divergence requires both parameters from the same family")]
    MismatchedFamilies,

    #[error("maximum-likelihood estimation needs at least one sample")]
    EmptySample,

    #[error("node ({0}) has no children: it is a leaf")]
    LeafHasNoChildren(NodeId),

    #[error("node ({0}) has no active leaves beneath it")]
    NodeRemoved(NodeId),

    #[error("({0}) is not a leaf")]
    NotALeaf(NodeId),

    #[error("leaf ({0}) was already removed")]
    AlreadyRemoved(NodeId),

    #[error("anomaly parameter for leaf {leaf} lies outside the anomaly set")]
    AnomalyOutsideSet { leaf: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario does not define level {level} (supports {supported} levels)")]
    LevelNotSupported { level: u32, supported: u32 },

    #[error("scenario failed validation: {0}")]
    ScenarioInvalid(String),

    #[error("sample cap exceeded")]
    SampleCapExceeded,

    #[error("no sample size up to {max} reaches the drift margin at level {level}")]
    DriftUnreachable { level: u32, max: u32 },

    #[error("no calibration entry for scenario {scenario:#018x} at level {level}")]
    MissingCalibration { scenario: u64, level: u32 },

    #[error("report is empty")]
    EmptyReport,

    #[error("malformed report: {0}")]
    MalformedReport(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
