use thiserror::Error;

use crate::mixture::GaussianMixture;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("Ait-Sahalia drift is undefined at x = 0")]
    DriftSingularity,

    #[error("diffusion needs {needed} lagged values, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("non-finite spread at step {step}")]
    NonFinite { step: usize },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("mixture fit did not converge after {iterations} iterations (kl = {kl:.3e})")]
    MixtureFit {
        iterations: usize,
        kl: f64,
        last: Box<GaussianMixture>,
    },

    #[error("filter failed at t = {t}: {source}")]
    Filter { t: usize, source: Box<Error> },

    #[error("data: {0}")]
    Data(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Filter { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            Error::DriftSingularity
            | Error::NonFinite { .. }
            | Error::MixtureFit { .. } => 3,
            _ => 2,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Config(e.to_string())
    }
}
