//! Run configuration, artifacts and the `train`, `eval`, `explain` and
//! `export-matrix` commands.
//!
//! A run directory holds everything needed to evaluate or explain its model
//! on new data:
//!
//! ```text
//! config.json          resolved configuration
//! representation.json  features, provenance and importances
//! features/<id>.py     one source file per feature
//! model.json           final forest
//! did3_tree.json       the D-ID3 tree (D-ID3 runs only)
//! metrics.json         training (and holdout) metrics
//! checkpoint.json      trainer state after the last finished iteration
//! run.log              progress in plain text
//! ```

mod config;
mod metrics;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    DatasetConfig, ExecutorConfig, ExecutorKind, ProposerBackend, ProposerConfig, RunConfig, TrainerChoice,
    TrainerConfig,
};
pub use metrics::{classification_metrics, pearson, per_class_f1, regression_metrics, rmse, Metrics};

use crate::data::{load_chess_centipawns, load_dataset, split_holdout, Dataset, Task};
use crate::did3::did3_train;
use crate::exec::{evaluate_matrix, EvalOptions, Executor, FailurePolicy, NativeExecutor, WorkerConfig, WorkerExecutor};
use crate::explain::{model_shap_dense, report_top_features, Attribution, SampleRow, ShapReport, DEFAULT_SHAP_SAMPLE};
use crate::f2::f2_train;
use crate::feature::{Feature, FeatureId, Representation};
use crate::matrix::FeatureMatrix;
use crate::proposer::{LlmBackend, PromptSet, Proposer, Script, ScriptedProposer};
use crate::tree::{DecisionTree, Model, ModelFile, Targets};
use crate::TrainOptions;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad configuration or inputs; nothing was run.
    #[error("{0}")]
    Config(String),
    /// The run started and then failed.
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

struct RunLog(File);

impl RunLog {
    fn open(path: &Path, append: bool) -> Result<Self, AppError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(RunLog(file))
    }

    fn line(&mut self, text: impl AsRef<str>) {
        log::info!("{}", text.as_ref());
        let _ = writeln!(self.0, "{}", text.as_ref());
    }
}

fn load_data(config: &DatasetConfig, path: &Path) -> Result<Dataset, AppError> {
    let loaded = if config.centipawns {
        load_chess_centipawns(path, &config.label_field)
    } else {
        load_dataset(path, &config.schema())
    };
    loaded.map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn build_executor(config: &ExecutorConfig) -> Box<dyn Executor> {
    match config.kind {
        ExecutorKind::Native => Box::new(NativeExecutor::new(config.timeouts())),
        ExecutorKind::Worker => Box::new(WorkerExecutor::new(WorkerConfig {
            command: config.command.clone(),
            workers: config.workers.max(1),
            timeouts: config.timeouts(),
        })),
    }
}

fn build_proposer(config: &ProposerConfig) -> Result<Box<dyn Proposer>, AppError> {
    let err = |e: crate::proposer::ProposerError| AppError::Config(e.to_string());
    Ok(match config.backend {
        ProposerBackend::Scripted => {
            let path = config.script.as_deref().expect("validated config has a script");
            Box::new(ScriptedProposer::new(Script::load(path).map_err(err)?))
        }
        ProposerBackend::Llm => Box::new(LlmBackend::new(config.llm.clone()).map_err(err)?),
    })
}

/// Feature values of a dataset under a model's feature order. Examples on
/// which any feature fails are excluded.
pub struct Featurized {
    /// Dataset positions of the usable examples.
    pub positions: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    /// Ids of excluded examples.
    pub excluded: Vec<usize>,
}

pub fn featurize(features: &[Feature], dataset: &Dataset, exec: &dyn Executor) -> Featurized {
    let mut features: Vec<Feature> = features.to_vec();
    let examples: Vec<_> = dataset.examples().iter().collect();
    let mut matrix = FeatureMatrix::new();
    let options = EvalOptions {
        policy: FailurePolicy::SkipCells,
        ..EvalOptions::default()
    };
    let outcome = evaluate_matrix(&mut features, &examples, exec, &mut matrix, &options);
    for cell in &outcome.failures {
        log::warn!(
            "feature {} failed on example {}: {}",
            cell.feature_id,
            cell.example_id,
            cell.failure.message
        );
    }
    let mut out = Featurized {
        positions: Vec::new(),
        rows: Vec::new(),
        excluded: Vec::new(),
    };
    for (pos, ex) in dataset.examples().iter().enumerate() {
        let row: Option<Vec<f64>> = features.iter().map(|f| matrix.get(&f.id, ex.id)).collect();
        match row {
            Some(row) => {
                out.positions.push(pos);
                out.rows.push(row);
            }
            None => out.excluded.push(ex.id),
        }
    }
    out
}

/// Features of `representation` in the order of `ids`.
fn features_for(representation: &Representation, ids: &[FeatureId]) -> Result<Vec<Feature>, AppError> {
    ids.iter()
        .map(|id| {
            representation
                .get(id)
                .cloned()
                .ok_or_else(|| AppError::Config(format!("model uses feature {id} missing from the representation")))
        })
        .collect()
}

pub fn score(model: &Model, data: &Featurized, dataset: &Dataset) -> Metrics {
    let excluded = data.excluded.len();
    match dataset.targets() {
        Targets::Regression(ys) => {
            let preds: Vec<f64> = data.rows.iter().map(|r| model.predict_row(r).numeric().unwrap_or(f64::NAN)).collect();
            let labels: Vec<f64> = data.positions.iter().map(|&p| ys[p]).collect();
            regression_metrics(&preds, &labels, excluded)
        }
        Targets::Classification { labels, .. } => {
            let preds: Vec<usize> = data.rows.iter().map(|r| model.predict_row(r).class().unwrap_or(usize::MAX)).collect();
            let labels: Vec<usize> = data.positions.iter().map(|&p| labels[p]).collect();
            classification_metrics(&preds, &labels, dataset.classes(), excluded)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub forest: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<Metrics>,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub trainer: TrainerChoice,
    pub n_features: usize,
    pub train: ModelMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<ModelMetrics>,
}

fn feature_file(f: &Feature) -> String {
    let mut head = format!("# feature {}\n# trainer {} iteration {}", f.id, f.origin.trainer, f.origin.iteration);
    if let Some(leaf) = f.origin.leaf {
        head.push_str(&format!(" leaf {leaf}"));
    }
    format!("{head}\n{}\n", f.source.trim_end())
}

fn write_features(dir: &Path, features: &[Feature]) -> Result<(), AppError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for f in features {
        let path = dir.join(format!("{}.py", f.id));
        std::fs::write(&path, feature_file(f)).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn evaluate_models(
    forest: &Model,
    tree: Option<&Model>,
    features: &[Feature],
    dataset: &Dataset,
    exec: &dyn Executor,
) -> Result<ModelMetrics, AppError> {
    let forest_features = features_for_model(features, forest)?;
    let forest_metrics = score(forest, &featurize(&forest_features, dataset, exec), dataset);
    let tree_metrics = match tree {
        Some(t) => {
            let fs = features_for_model(features, t)?;
            Some(score(t, &featurize(&fs, dataset, exec), dataset))
        }
        None => None,
    };
    Ok(ModelMetrics {
        forest: forest_metrics,
        tree: tree_metrics,
    })
}

fn features_for_model(features: &[Feature], model: &Model) -> Result<Vec<Feature>, AppError> {
    let rep = Representation {
        features: features.to_vec(),
        provenance: Vec::new(),
        importances: Default::default(),
    };
    features_for(&rep, model.feature_ids())
}

/// Runs the configured trainer and writes the run directory.
pub fn cmd_train(mut config: RunConfig, resume: bool) -> Result<RunMetrics, AppError> {
    config.validate()?;
    let out = config.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| AppError::Config(format!("{}: {e}", out.display())))?;
    let mut log = RunLog::open(&out.join("run.log"), resume)?;

    let full = load_data(&config.dataset, &config.dataset.path)?;
    if full.task() == Task::Classification {
        config.dataset.classes = Some(full.classes().to_vec());
    }
    let (train, holdout) = match config.dataset.holdout {
        Some(fraction) => {
            let (a, b) = split_holdout(&full, fraction, config.seed).map_err(|e| AppError::Config(e.to_string()))?;
            (a, Some(b))
        }
        None => (full, None),
    };
    write_json(&out.join("config.json"), &config)?;

    let prompts = match &config.proposer.templates {
        Some(dir) => PromptSet::from_dir(dir, train.adapter()).map_err(|e| AppError::Config(e.to_string()))?,
        None => PromptSet::builtin(train.adapter()),
    };
    let exec = build_executor(&config.executor);
    let mut proposer = build_proposer(&config.proposer)?;
    let mut options = TrainOptions::new(config.task_description.clone(), prompts);
    let checkpoint = out.join("checkpoint.json");
    options.checkpoint = Some(checkpoint.clone());
    options.resume = resume;

    log.line(format!(
        "{} run on {} training examples, {} held out, seed {}",
        match config.trainer.kind {
            TrainerChoice::F2 => "f2",
            TrainerChoice::Did3 => "did3",
        },
        train.len(),
        holdout.as_ref().map_or(0, Dataset::len),
        config.seed
    ));
    let abort = |e: crate::TrainError| {
        AppError::Runtime(format!("training aborted: {e}; last checkpoint {}", checkpoint.display()))
    };
    let (representation, forest, tree) = match config.trainer.kind {
        TrainerChoice::F2 => {
            let o = f2_train(&train, &mut proposer, exec.as_ref(), &config.trainer.f2, &options).map_err(abort)?;
            (o.representation, o.forest, None)
        }
        TrainerChoice::Did3 => {
            let o = did3_train(&train, &mut proposer, exec.as_ref(), &config.trainer.did3, &options).map_err(abort)?;
            log.line(format!(
                "did3 ran {} iterations{}; tree has {} leaves",
                o.iterations_run,
                if o.halted_early { " and halted early" } else { "" },
                o.tree.tree.n_leaves()
            ));
            for (i, e) in o.error_trace.iter().enumerate() {
                log.line(format!("  total leaf error after iteration {i}: {e:.6}"));
            }
            (o.representation, o.forest, Some(o.tree))
        }
    };
    for p in &representation.provenance {
        log.line(format!(
            "iteration {}{}: proposed {}, accepted {}",
            p.iteration,
            p.leaf.map(|l| format!(" leaf {l}")).unwrap_or_default(),
            p.proposed.len(),
            p.accepted.len()
        ));
    }
    log.line(format!("{} features learned; final forest has {} trees", representation.features.len(), forest.trees.len()));

    write_features(&out.join("features"), &representation.features)?;
    write_json(&out.join("representation.json"), &representation)?;
    let forest = Model::Forest(forest);
    write_json(&out.join("model.json"), &ModelFile::new(forest.clone()))?;
    let tree = tree.map(Model::Tree);
    let tree_path = out.join("did3_tree.json");
    match &tree {
        Some(t) => write_json(&tree_path, &ModelFile::new(t.clone()))?,
        None if tree_path.exists() => std::fs::remove_file(&tree_path).map_err(|e| io_err(&tree_path, e))?,
        None => {}
    }

    let features = &representation.features;
    let metrics = RunMetrics {
        trainer: config.trainer.kind,
        n_features: features.len(),
        train: evaluate_models(&forest, tree.as_ref(), features, &train, exec.as_ref())?,
        holdout: match &holdout {
            Some(h) => Some(evaluate_models(&forest, tree.as_ref(), features, h, exec.as_ref())?),
            None => None,
        },
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    log.line(format!("training metrics (forest)\n{}", metrics.train.forest));
    if let Some(h) = &metrics.holdout {
        log.line(format!("holdout metrics (forest)\n{}", h.forest));
    }
    Ok(metrics)
}

/// Which model of a run directory to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelChoice {
    #[default]
    Forest,
    /// The D-ID3 tree.
    Tree,
}

/// A loaded run directory.
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub representation: Representation,
    pub model: Model,
}

impl Run {
    /// Accepts the run directory or a model file inside it.
    pub fn open(path: &Path, choice: ModelChoice) -> Result<Self, AppError> {
        let dir = if path.is_file() {
            path.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            path.to_path_buf()
        };
        let model_path = if path.is_file() {
            path.to_path_buf()
        } else {
            dir.join(match choice {
                ModelChoice::Forest => "model.json",
                ModelChoice::Tree => "did3_tree.json",
            })
        };
        let file: ModelFile = read_json(&model_path)?;
        Ok(Run {
            config: read_json(&dir.join("config.json"))?,
            representation: read_json(&dir.join("representation.json"))?,
            model: file.model,
            dir,
        })
    }

    pub fn features(&self) -> Result<Vec<Feature>, AppError> {
        features_for(&self.representation, self.model.feature_ids())
    }

    pub fn load_dataset(&self, path: &Path) -> Result<Dataset, AppError> {
        let d = load_data(&self.config.dataset, path)?;
        if d.adapter() != self.config.dataset.adapter || d.task() != self.model.task() {
            return Err(AppError::Config("dataset does not match the model's adapter and task".into()));
        }
        Ok(d)
    }

    pub fn executor(&self) -> Box<dyn Executor> {
        build_executor(&self.config.executor)
    }
}

pub fn cmd_eval(run: &Run, dataset_path: &Path) -> Result<Metrics, AppError> {
    let dataset = run.load_dataset(dataset_path)?;
    let exec = run.executor();
    let data = featurize(&run.features()?, &dataset, exec.as_ref());
    if !data.excluded.is_empty() {
        log::warn!("{} examples excluded after feature failures: {:?}", data.excluded.len(), data.excluded);
    }
    Ok(score(&run.model, &data, &dataset))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainTarget {
    Example(usize),
    Sample(usize),
}

impl Default for ExplainTarget {
    fn default() -> Self {
        ExplainTarget::Sample(DEFAULT_SHAP_SAMPLE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainRequest {
    pub target: ExplainTarget,
    pub top_n: usize,
    /// Class whose probability is explained; defaults to the positive class
    /// for two classes, the predicted class for a single example, and the
    /// first class otherwise.
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleExplanation {
    pub example_id: usize,
    pub class: Option<String>,
    pub attribution: Attribution,
    /// `(feature id, docstring, contribution)` by decreasing magnitude.
    pub top: Vec<(FeatureId, String, f64)>,
    /// Sum of the contributions not in `top`.
    pub rest: f64,
}

impl std::fmt::Display for SingleExplanation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.class {
            Some(c) => writeln!(f, "example {}: probability of class {c}", self.example_id)?,
            None => writeln!(f, "example {}", self.example_id)?,
        }
        writeln!(f, "base value {:>+12.6}", self.attribution.base_value)?;
        for (id, doc, v) in &self.top {
            let doc = if doc.is_empty() { id.as_str() } else { doc };
            writeln!(f, "{v:>+23.6}  {doc} [{id}]")?;
        }
        if self.top.len() < self.attribution.contributions.len() {
            writeln!(f, "{:>+23.6}  other features", self.rest)?;
        }
        writeln!(f, "output     {:>+12.6}", self.attribution.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Explanation {
    Single(SingleExplanation),
    Report(ShapReport),
}

fn resolve_class(dataset: &Dataset, name: Option<&str>) -> Result<Option<usize>, AppError> {
    if dataset.task() == Task::Regression {
        return Ok(None);
    }
    match name {
        Some(n) => dataset
            .classes()
            .iter()
            .position(|c| c == n)
            .map(Some)
            .ok_or_else(|| AppError::Config(format!("unknown class {n}"))),
        None if dataset.classes().len() == 2 => Ok(Some(1)),
        None => Ok(None),
    }
}

pub fn cmd_explain(run: &Run, dataset_path: &Path, request: &ExplainRequest) -> Result<Explanation, AppError> {
    let dataset = run.load_dataset(dataset_path)?;
    let exec = run.executor();
    let features = run.features()?;
    let data = featurize(&features, &dataset, exec.as_ref());
    let class = resolve_class(&dataset, request.class.as_deref())?;
    let shap_err = |e: crate::explain::ExplainError| AppError::Runtime(e.to_string());
    let class_name = |c: usize| dataset.classes()[c].clone();
    match request.target {
        ExplainTarget::Example(id) => {
            let Some(k) = data.positions.iter().position(|&p| dataset.examples()[p].id == id) else {
                return Err(if data.excluded.contains(&id) {
                    AppError::Runtime(format!("a feature failed on example {id}"))
                } else {
                    AppError::Config(format!("no example with id {id}"))
                });
            };
            let row = &data.rows[k];
            let target = match (dataset.task(), class) {
                (Task::Regression, _) => None,
                (_, Some(c)) => Some(c),
                (_, None) => run.model.predict_row(row).class(),
            };
            let attribution = model_shap_dense(&run.model, row, target.unwrap_or(0)).map_err(shap_err)?;
            let mut ranked: Vec<(FeatureId, f64)> = attribution.contributions.iter().map(|(id, v)| (id.clone(), *v)).collect();
            ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
            let rest = ranked.iter().skip(request.top_n).map(|(_, v)| v).sum();
            let top = ranked
                .into_iter()
                .take(request.top_n)
                .map(|(id, v)| {
                    let doc = run.representation.get(&id).map(|f| f.docstring.clone()).unwrap_or_default();
                    (id, doc, v)
                })
                .collect();
            Ok(Explanation::Single(SingleExplanation {
                example_id: id,
                class: target.map(class_name),
                attribution,
                top,
                rest,
            }))
        }
        ExplainTarget::Sample(size) => {
            let mut rng = ChaCha8Rng::seed_from_u64(run.config.seed);
            let n = data.rows.len();
            let mut picks = rand::seq::index::sample(&mut rng, n, size.min(n)).into_vec();
            picks.sort_unstable();
            let labels = dataset.labels();
            let sample: Vec<SampleRow> = picks
                .into_iter()
                .map(|k| SampleRow {
                    example_id: dataset.examples()[data.positions[k]].id,
                    row: data.rows[k].clone(),
                    label: labels[data.positions[k]].to_string(),
                })
                .collect();
            let target = match dataset.task() {
                Task::Regression => None,
                Task::Classification => {
                    let c = class.unwrap_or(0);
                    Some((c, class_name(c)))
                }
            };
            let report = report_top_features(&run.model, &features, &sample, request.top_n, target).map_err(shap_err)?;
            Ok(Explanation::Report(report))
        }
    }
}

/// Writes the feature values of every example as CSV: `example_id`, one
/// column per representation feature, then the label. Failed cells are
/// empty.
pub fn cmd_export_matrix(run: &Run, dataset_path: &Path, out: &Path) -> Result<usize, AppError> {
    let dataset = run.load_dataset(dataset_path)?;
    let exec = run.executor();
    let mut features = run.representation.features.clone();
    let examples: Vec<_> = dataset.examples().iter().collect();
    let mut matrix = FeatureMatrix::new();
    let options = EvalOptions {
        policy: FailurePolicy::SkipCells,
        ..EvalOptions::default()
    };
    evaluate_matrix(&mut features, &examples, exec.as_ref(), &mut matrix, &options);
    let mut w = csv::Writer::from_path(out).map_err(|e| io_err(out, e))?;
    let mut header = vec!["example_id".to_string()];
    header.extend(features.iter().map(|f| f.id.to_string()));
    header.push("label".into());
    w.write_record(&header).map_err(|e| io_err(out, e))?;
    for (ex, label) in dataset.examples().iter().zip(dataset.labels()) {
        let mut rec = vec![ex.id.to_string()];
        rec.extend(features.iter().map(|f| matrix.get(&f.id, ex.id).map(|v| v.to_string()).unwrap_or_default()));
        rec.push(label.to_string());
        w.write_record(&rec).map_err(|e| io_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(dataset.len())
}

/// The D-ID3 tree of a run, if it has one.
pub fn load_did3_tree(dir: &Path) -> Result<Option<DecisionTree>, AppError> {
    let path = dir.join("did3_tree.json");
    if !path.exists() {
        return Ok(None);
    }
    let file: ModelFile = read_json(&path)?;
    Ok(match file.model {
        Model::Tree(t) => Some(t),
        Model::Forest(_) => None,
    })
}
