//! Feature execution: loading feature source through an [`Executor`],
//! validating it on a sample, and filling a [`FeatureMatrix`](crate::matrix::FeatureMatrix).

mod evaluate;
mod native;
pub mod protocol;
mod validate;
mod worker;

pub use evaluate::{evaluate_matrix, EvalOptions, EvalOutcome, FailedCell, FailurePolicy};
pub use native::NativeExecutor;
pub use validate::{validate_feature, validation_sample, ValidationOutcome, ValidationReport, DEFAULT_VALIDATION_SAMPLE};
pub use worker::{WorkerConfig, WorkerExecutor};

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::Payload;
use crate::feature::FeatureId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    LoadError,
    RuntimeException,
    Timeout,
    NonFinite,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::LoadError => "load_error",
            FailureKind::RuntimeException => "runtime_exception",
            FailureKind::Timeout => "timeout",
            FailureKind::NonFinite => "non_finite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FailureKind::LoadError,
            FailureKind::RuntimeException,
            FailureKind::Timeout,
            FailureKind::NonFinite,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A failed load or evaluation. `example_index` is relative to the batch
/// passed to [`Executor::eval`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct ExecFailure {
    pub kind: FailureKind,
    pub message: String,
    pub example_index: Option<usize>,
}

impl ExecFailure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        ExecFailure {
            kind,
            message: message.into(),
            example_index: None,
        }
    }

    pub fn at(mut self, index: usize) -> Self {
        self.example_index = Some(index);
        self
    }
}

/// Runs feature source text on payloads.
///
/// A feature must be loaded before it is evaluated. Evaluation returns one raw
/// value per payload; callers are responsible for rejecting non-finite ones.
pub trait Executor: Send + Sync {
    fn load(&self, feature: &FeatureId, source: &str) -> Result<(), ExecFailure>;

    fn eval(&self, feature: &FeatureId, payloads: &[&Payload]) -> Result<Vec<f64>, ExecFailure>;
}

/// Timeouts shared by both executor kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    pub call: Duration,
    pub load: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            call: Duration::from_secs(2),
            load: Duration::from_secs(10),
        }
    }
}
