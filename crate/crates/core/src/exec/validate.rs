use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExecFailure, Executor, FailureKind};
use crate::data::Example;
use crate::feature::{Feature, FeatureId, FeatureStatus};
use crate::matrix::FeatureMatrix;

/// Default number of examples a candidate is checked on.
pub const DEFAULT_VALIDATION_SAMPLE: usize = 10_000;

const BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ValidationOutcome {
    Accepted,
    Rejected { reason: FailureKind, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub feature_id: FeatureId,
    #[serde(flatten)]
    pub outcome: ValidationOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offending_example_id: Option<usize>,
    pub sample_size: usize,
    /// Values computed on the sample, by example id. Empty when rejected.
    #[serde(skip)]
    pub values: Vec<(usize, f64)>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.outcome == ValidationOutcome::Accepted
    }

    /// Stores the sample values so later evaluation reuses them.
    pub fn cache_into(&self, matrix: &mut FeatureMatrix) {
        for &(example, v) in &self.values {
            if !matrix.is_filled(&self.feature_id, example) {
                matrix.set(&self.feature_id, example, v);
            }
        }
    }
}

/// Picks `min(size, n)` positions out of `n`, seeded, in ascending order.
pub fn validation_sample(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, size).into_vec();
    picked.sort_unstable();
    picked
}

/// Loads `feature` and evaluates it on every sample example, stopping at the
/// first exception, timeout or non-finite value. Updates the feature's status.
///
/// The first example is evaluated alone so that a feature that hangs on every
/// input is rejected after a single call timeout.
pub fn validate_feature(feature: &mut Feature, sample: &[&Example], exec: &dyn Executor) -> ValidationReport {
    let start = Instant::now();
    let mut report = ValidationReport {
        feature_id: feature.id.clone(),
        outcome: ValidationOutcome::Accepted,
        offending_example_id: None,
        sample_size: sample.len(),
        values: Vec::with_capacity(sample.len()),
        elapsed: Duration::ZERO,
    };

    let result = run(feature, sample, exec, &mut report.values);
    if let Err(failure) = result {
        report.offending_example_id = failure.example_index.and_then(|i| sample.get(i)).map(|e| e.id);
        report.outcome = ValidationOutcome::Rejected {
            reason: failure.kind,
            message: failure.message,
        };
        report.values.clear();
    }
    feature.status = match &report.outcome {
        ValidationOutcome::Accepted => FeatureStatus::Validated,
        ValidationOutcome::Rejected { reason, message } => FeatureStatus::Rejected {
            reason: *reason,
            message: message.clone(),
        },
    };
    report.elapsed = start.elapsed();
    log::debug!(
        "validated {} on {} examples in {:?}: {:?}",
        feature.id,
        sample.len(),
        report.elapsed,
        report.outcome
    );
    report
}

/// Failure indices returned from here are relative to the whole sample.
fn run(feature: &Feature, sample: &[&Example], exec: &dyn Executor, out: &mut Vec<(usize, f64)>) -> Result<(), ExecFailure> {
    if sample.is_empty() {
        return Err(ExecFailure::new(FailureKind::LoadError, "empty validation sample"));
    }
    exec.load(&feature.id, &feature.source)?;
    let mut offset = 0;
    let mut chunk = 1;
    while offset < sample.len() {
        let end = (offset + chunk).min(sample.len());
        let batch = &sample[offset..end];
        let payloads: Vec<_> = batch.iter().map(|e| &e.payload).collect();
        let values = exec.eval(&feature.id, &payloads).map_err(|mut f| {
            f.example_index = f.example_index.map(|i| i + offset);
            f
        })?;
        if values.len() != batch.len() {
            return Err(ExecFailure::new(
                FailureKind::RuntimeException,
                format!("executor returned {} values for {} examples", values.len(), batch.len()),
            ));
        }
        for (i, (ex, v)) in batch.iter().zip(values).enumerate() {
            if !v.is_finite() {
                return Err(ExecFailure::new(FailureKind::NonFinite, format!("returned {v}")).at(offset + i));
            }
            out.push((ex.id, v));
        }
        offset = end;
        chunk = BATCH;
    }
    Ok(())
}
