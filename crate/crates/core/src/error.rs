use std::fmt;

use crate::domain::KLevel;

/// One violated configuration or value invariant, located by field path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("route plan has no row for optimal K={0}")]
    MissingPlanRow(KLevel),

    #[error("no worker runs K'={0}")]
    NoWorkerAtLevel(KLevel),

    #[error("policy error at t={time_s:.3}s: {source}")]
    Policy {
        time_s: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),

    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn violations(&self) -> Option<&[Violation]> {
        match self {
            Error::InvalidConfig(v) => Some(v),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
