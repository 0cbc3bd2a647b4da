use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{Adapter, DatasetSchema, Task};
use crate::did3::Did3Params;
use crate::exec::Timeouts;
use crate::f2::F2Params;
use crate::proposer::LlmConfig;

use super::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerChoice {
    F2,
    Did3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub adapter: Adapter,
    pub task: Task,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    /// Labels are centipawn scores, converted to win probabilities.
    #[serde(default)]
    pub centipawns: bool,
    /// Fraction held out for evaluation after training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<f64>,
}

fn default_label_field() -> String {
    "y".to_string()
}

impl DatasetConfig {
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            adapter: self.adapter,
            task: self.task,
            label_field: self.label_field.clone(),
            classes: self.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub kind: TrainerChoice,
    pub f2: F2Params,
    pub did3: Did3Params,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            kind: TrainerChoice::Did3,
            f2: F2Params::default(),
            did3: Did3Params::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposerBackend {
    #[default]
    Llm,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerConfig {
    pub backend: ProposerBackend,
    /// Script file for the scripted backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub llm: LlmConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorKind {
    #[default]
    Native,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub kind: ExecutorKind,
    /// Program and arguments starting one worker process.
    pub command: Vec<String>,
    pub workers: usize,
    pub call_timeout_ms: u64,
    pub load_timeout_ms: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        let t = Timeouts::default();
        ExecutorConfig {
            kind: ExecutorKind::Native,
            command: Vec::new(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            call_timeout_ms: t.call.as_millis() as u64,
            load_timeout_ms: t.load.as_millis() as u64,
        }
    }
}

impl ExecutorConfig {
    pub fn timeouts(&self) -> Timeouts {
        Timeouts {
            call: Duration::from_millis(self.call_timeout_ms),
            load: Duration::from_millis(self.load_timeout_ms),
        }
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Plain-language statement of the prediction task for the proposer.
    #[serde(default)]
    pub task_description: String,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub proposer: ProposerConfig,
    #[serde(default)]
    pub executor: ExecutorConfig,
    pub output: PathBuf,
    /// Overrides the trainer and final forest seeds.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Defaults around a dataset and output directory.
    pub fn new(dataset: DatasetConfig, output: PathBuf) -> Self {
        RunConfig {
            dataset,
            task_description: String::new(),
            trainer: TrainerConfig::default(),
            proposer: ProposerConfig::default(),
            executor: ExecutorConfig::default(),
            output,
            seed: 0,
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`. Relative paths
    /// are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, AppError> {
        let mut config: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| AppError::Config(format!("invalid config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| AppError::Config(format!("invalid config: {e}")))?
        };
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.output);
        self.proposer.script.iter_mut().for_each(fix);
        self.proposer.templates.iter_mut().for_each(fix);
    }

    /// Checks referenced paths and option consistency, then copies the run
    /// seed into every seeded component.
    pub fn validate(&mut self) -> Result<(), AppError> {
        let bad = |m: String| Err(AppError::Config(m));
        if !self.dataset.path.is_file() {
            return bad(format!("dataset {} does not exist", self.dataset.path.display()));
        }
        if self.dataset.centipawns && (self.dataset.adapter != Adapter::Chess || self.dataset.task != Task::Regression) {
            return bad("centipawn labels need the chess adapter and a regression task".into());
        }
        if let Some(f) = self.dataset.holdout {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("holdout fraction {f} is not in (0, 1)"));
            }
        }
        match (&self.proposer.backend, &self.proposer.script) {
            (ProposerBackend::Scripted, None) => return bad("the scripted proposer needs a script file".into()),
            (ProposerBackend::Scripted, Some(p)) if !p.is_file() => {
                return bad(format!("script {} does not exist", p.display()))
            }
            _ => {}
        }
        if let Some(dir) = &self.proposer.templates {
            if !dir.is_dir() {
                return bad(format!("template directory {} does not exist", dir.display()));
            }
        }
        if self.executor.kind == ExecutorKind::Worker && self.executor.command.is_empty() {
            return bad("the worker executor needs a command".into());
        }
        if self.executor.call_timeout_ms == 0 || self.executor.load_timeout_ms == 0 {
            return bad("timeouts must be positive".into());
        }
        let t = &self.trainer;
        if t.f2.batch_size == 0 || t.did3.candidates_per_call == 0 {
            return bad("proposal batch sizes must be positive".into());
        }
        if t.f2.final_forest.n_trees == 0 || t.did3.final_forest.n_trees == 0 || t.f2.scoring_forest.n_trees == 0 {
            return bad("forests need at least one tree".into());
        }
        self.trainer.f2.seed = self.seed;
        self.trainer.f2.final_forest.seed = self.seed;
        self.trainer.did3.seed = self.seed;
        self.trainer.did3.final_forest.seed = self.seed;
        Ok(())
    }
}
