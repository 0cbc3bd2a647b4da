//! Plumbing shared by the two trainers.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{Dataset, Example};
use crate::exec::{evaluate_matrix, validate_feature, validation_sample, EvalOptions, Executor, ValidationReport};
use crate::feature::{Feature, FeatureId};
use crate::matrix::FeatureMatrix;
use crate::proposer::{PromptSet, ProposerError, TemplateError};
use crate::tree::FeatureTable;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("proposer failed: {0}")]
    Proposer(#[from] ProposerError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
}

/// Settings that are not hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Plain-language task statement shown to the proposer.
    pub task_description: String,
    pub prompts: PromptSet,
    pub eval: EvalOptions,
    /// Written after every iteration when set.
    pub checkpoint: Option<PathBuf>,
    /// Continue from `checkpoint` if it exists.
    pub resume: bool,
}

impl TrainOptions {
    pub fn new(task_description: impl Into<String>, prompts: PromptSet) -> Self {
        TrainOptions {
            task_description: task_description.into(),
            prompts,
            eval: EvalOptions::default(),
            checkpoint: None,
            resume: false,
        }
    }
}

/// Random stream for one iteration; independent of how many iterations ran
/// before, which keeps resumed runs identical to uninterrupted ones.
pub(crate) fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let fail = |message: String| TrainError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut text = serde_json::to_string_pretty(value).map_err(|e| fail(e.to_string()))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| fail(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| fail(e.to_string()))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Checkpoint to resume from, if resuming was requested and one exists.
pub(crate) fn resume_from<T: DeserializeOwned>(options: &TrainOptions) -> Result<Option<T>, TrainError> {
    match &options.checkpoint {
        Some(path) if options.resume && path.exists() => read_json(path).map(Some),
        _ => Ok(None),
    }
}

/// Training examples, their feature matrix, and the fixed validation sample.
pub(crate) struct Workspace<'a> {
    pub dataset: &'a Dataset,
    pub exec: &'a dyn Executor,
    pub eval: EvalOptions,
    pub matrix: FeatureMatrix,
    pub ids: Vec<usize>,
    sample: Vec<usize>,
}

impl<'a> Workspace<'a> {
    pub fn new(
        dataset: &'a Dataset,
        exec: &'a dyn Executor,
        eval: EvalOptions,
        validation_size: usize,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        Ok(Workspace {
            dataset,
            exec,
            eval,
            matrix: FeatureMatrix::new(),
            ids: dataset.example_ids(),
            sample: validation_sample(dataset.len(), validation_size.max(1), seed),
        })
    }

    fn examples(&self) -> Vec<&'a Example> {
        self.dataset.examples().iter().collect()
    }

    /// Validates candidates on the sample, then evaluates the survivors on
    /// every training example. Returns all candidates with updated status and
    /// the validation reports, in input order.
    pub fn admit(&mut self, mut candidates: Vec<Feature>) -> (Vec<Feature>, Vec<ValidationReport>) {
        let examples = self.dataset.examples();
        let sample: Vec<&Example> = self.sample.iter().map(|&p| &examples[p]).collect();
        let exec = self.exec;
        let reports: Vec<ValidationReport> = candidates
            .par_iter_mut()
            .map(|f| validate_feature(f, &sample, exec))
            .collect();
        for r in reports.iter().filter(|r| r.accepted()) {
            r.cache_into(&mut self.matrix);
        }
        self.fill(&mut candidates);
        (candidates, reports)
    }

    /// Computes any missing cells; features failing here are quarantined.
    pub fn fill(&mut self, features: &mut [Feature]) {
        let examples = self.examples();
        let outcome = evaluate_matrix(features, &examples, self.exec, &mut self.matrix, &self.eval);
        for id in &outcome.quarantined {
            log::warn!("feature {id} failed after validation and was dropped");
        }
    }

    /// Dense table over the given dataset positions.
    pub fn table(&self, features: &[FeatureId], positions: &[usize]) -> FeatureTable {
        let ids: Vec<usize> = positions.iter().map(|&p| self.ids[p]).collect();
        if features.is_empty() {
            return FeatureTable::empty(ids.len());
        }
        self.matrix
            .dense(features, &ids)
            .expect("validated features are evaluated on every training example")
    }

    pub fn full_table(&self, features: &[FeatureId]) -> FeatureTable {
        let all: Vec<usize> = (0..self.ids.len()).collect();
        self.table(features, &all)
    }
}
