use thiserror::Error;

use radsurr_nn::NnError;

#[derive(Debug, Error)]
pub enum CoreError {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration; `field` is a dotted path into the run config.
    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("array length mismatch: {0}")]
    Dimension(String),

    #[error(
        "radiosity iteration did not converge in band {band} after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        band: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<CoreError>,
    },

    #[error("all {} trials failed", ledger.len())]
    AllTrialsFailed { ledger: Vec<crate::tuner::TrialRecord> },

    #[error("invalid reference: {0}")]
    InvalidReference(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            CoreError::Domain(_) => "domain",
            CoreError::Config { .. } => "config",
            CoreError::Geometry(_) => "geometry",
            CoreError::Dimension(_) => "dimension",
            CoreError::NonConvergence { .. } => "non_convergence",
            CoreError::Sample { source, .. } => source.kind(),
            CoreError::AllTrialsFailed { .. } => "all_trials_failed",
            CoreError::InvalidReference(_) => "invalid_reference",
            CoreError::Dataset(_) => "dataset",
            CoreError::Nn(_) => "network",
            CoreError::Io(_) => "io",
            CoreError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
