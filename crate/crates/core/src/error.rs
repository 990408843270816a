//! Error type shared by all modules.

use crate::geometry::ChannelId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("output {output} has no finite relative degree up to order {max_order}")]
    RelativeDegreeNotFound { output: usize, max_order: usize },

    #[error("channel {0} is not isolable: minimal principal angle is below the floor")]
    IsolabilityViolation(ChannelId),

    #[error("observer design infeasible: {0}")]
    DesignInfeasible(String),

    #[error(
        "contraction metric verification failed at {violations} of {samples} states \
         (worst rate {worst_rate:.3e})"
    )]
    MetricVerification {
        violations: usize,
        samples: usize,
        worst_rate: f64,
    },

    #[error("observer diverged at t = {t:.6} s")]
    ObserverDiverged { t: f64 },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("dataset generation failed: {dropped} of {total} scenarios diverged")]
    GenerationFailure { dropped: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("incomparable traces: {0}")]
    IncomparableTraces(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
