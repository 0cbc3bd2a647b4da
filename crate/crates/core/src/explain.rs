//! SHAP attributions for trees and forests, and dataset-level reports.
//!
//! Attributions use path-dependent TreeSHAP: the expectation over a missing
//! feature follows the training counts recorded at each split. For
//! classification the explained output is the leaf proportion of a chosen
//! target class, averaged over trees for forests.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::feature::{Feature, FeatureId};
use crate::tree::{DecisionTree, Forest, Model, Node, Tree};

/// Examples in the dataset-level report unless configured otherwise.
pub const DEFAULT_SHAP_SAMPLE: usize = 150;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("node {0} has no training count")]
    MissingCounts(usize),
    #[error("no value for feature {0}")]
    MissingFeature(FeatureId),
    #[error("target class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("cannot write report: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub contributions: BTreeMap<FeatureId, f64>,
    /// Regression value, or probability of the target class.
    pub output: f64,
}

impl Attribution {
    /// `|base + Σ contributions − output|` relative to `max(1, |output|)`.
    pub fn additivity_gap(&self) -> f64 {
        let sum = self.base_value + self.contributions.values().sum::<f64>();
        (sum - self.output).abs() / self.output.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let d = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if d == 0 { 1.0 } else { 0.0 },
    });
    let denom = (d + 1) as f64;
    for i in (0..d).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (d - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElement>, k: usize) {
    let depth = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let denom = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * denom / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (depth - i) as f64);
        }
    }
    for i in k..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `k` removed.
fn unwound_sum(path: &[PathElement], k: usize) -> f64 {
    let depth = path.len() - 1;
    let (one, zero) = (path[k].one, path[k].zero);
    let denom = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * denom / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / denom;
        } else {
            total += path[i].weight / zero / ((depth - i) as f64 / denom);
        }
    }
    total
}

struct Walk<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    target: usize,
    phi: Vec<f64>,
}

impl Walk<'_> {
    fn recurse(&mut self, node: usize, parent: &[PathElement], zero: f64, one: f64, feature: Option<usize>) {
        let mut path = parent.to_vec();
        extend(&mut path, zero, one, feature);
        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                let v = value.scalar(self.target);
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let el = path[i];
                    self.phi[el.feature.expect("only the root element lacks a feature")] += w * (el.one - el.zero) * v;
                }
            }
            Node::Internal {
                feature: f,
                threshold,
                left,
                right,
                count,
                ..
            } => {
                let (hot, cold) = if self.row[*f] < *threshold {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                let n = *count as f64;
                let hot_frac = self.tree.nodes[hot].count() as f64 / n;
                let cold_frac = self.tree.nodes[cold].count() as f64 / n;
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                if let Some(k) = path.iter().position(|e| e.feature == Some(*f)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, k);
                }
                self.recurse(hot, &path, hot_frac * in_zero, in_one, Some(*f));
                self.recurse(cold, &path, cold_frac * in_zero, 0.0, Some(*f));
            }
        }
    }
}

fn check_counts(tree: &Tree) -> Result<(), ExplainError> {
    match tree.nodes.iter().position(|n| n.count() == 0) {
        Some(i) => Err(ExplainError::MissingCounts(i)),
        None => Ok(()),
    }
}

/// Count-weighted mean of the leaf scalars.
pub fn expected_value(tree: &Tree, target: usize) -> f64 {
    let root = tree.nodes.first().map_or(0, Node::count).max(1) as f64;
    tree.nodes
        .iter()
        .filter_map(|n| match n {
            Node::Leaf { value, count, .. } => Some(*count as f64 / root * value.scalar(target)),
            Node::Internal { .. } => None,
        })
        .sum()
}

/// Raw TreeSHAP on a dense row: `(base, phi per feature ordinal, output)`.
pub fn tree_shap_row(tree: &Tree, n_features: usize, row: &[f64], target: usize) -> Result<(f64, Vec<f64>, f64), ExplainError> {
    check_counts(tree)?;
    let mut walk = Walk {
        tree,
        row,
        target,
        phi: vec![0.0; n_features],
    };
    if !tree.nodes.is_empty() {
        walk.recurse(0, &[], 1.0, 1.0, None);
    }
    let output = tree.predict_row(row).scalar(target);
    Ok((expected_value(tree, target), walk.phi, output))
}

fn check_target(n_classes: usize, target: usize, is_classification: bool) -> Result<(), ExplainError> {
    if is_classification && target >= n_classes {
        return Err(ExplainError::ClassOutOfRange { class: target, n_classes });
    }
    Ok(())
}

fn row_of(feature_ids: &[FeatureId], values: &BTreeMap<FeatureId, f64>) -> Result<Vec<f64>, ExplainError> {
    feature_ids
        .iter()
        .map(|id| values.get(id).copied().ok_or_else(|| ExplainError::MissingFeature(id.clone())))
        .collect()
}

fn attribution(feature_ids: &[FeatureId], base: f64, phi: Vec<f64>, output: f64) -> Attribution {
    Attribution {
        base_value: base,
        contributions: feature_ids.iter().cloned().zip(phi).collect(),
        output,
    }
}

/// `target_class` is ignored for regression trees.
pub fn tree_shap(tree: &DecisionTree, values: &BTreeMap<FeatureId, f64>, target_class: usize) -> Result<Attribution, ExplainError> {
    let row = row_of(&tree.feature_ids, values)?;
    tree_shap_dense(tree, &row, target_class)
}

pub fn tree_shap_dense(tree: &DecisionTree, row: &[f64], target_class: usize) -> Result<Attribution, ExplainError> {
    check_target(tree.n_classes, target_class, tree.task == crate::data::Task::Classification)?;
    let (base, phi, output) = tree_shap_row(&tree.tree, tree.feature_ids.len(), row, target_class)?;
    Ok(attribution(&tree.feature_ids, base, phi, output))
}

/// Mean of per-tree attributions; the output is
/// [`Forest::predict_scalar_row`].
pub fn forest_shap(forest: &Forest, values: &BTreeMap<FeatureId, f64>, target_class: usize) -> Result<Attribution, ExplainError> {
    let row = row_of(&forest.feature_ids, values)?;
    forest_shap_dense(forest, &row, target_class)
}

pub fn forest_shap_dense(forest: &Forest, row: &[f64], target_class: usize) -> Result<Attribution, ExplainError> {
    check_target(forest.n_classes, target_class, forest.task == crate::data::Task::Classification)?;
    let k = forest.feature_ids.len();
    let mut phi = vec![0.0; k];
    let mut base = 0.0;
    for tree in &forest.trees {
        let (b, p, _) = tree_shap_row(tree, k, row, target_class)?;
        base += b;
        for (acc, v) in phi.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let n = forest.trees.len().max(1) as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    let output = forest.predict_scalar_row(row, target_class);
    Ok(attribution(&forest.feature_ids, base / n, phi, output))
}

pub fn model_shap_dense(model: &Model, row: &[f64], target_class: usize) -> Result<Attribution, ExplainError> {
    match model {
        Model::Tree(t) => tree_shap_dense(t, row, target_class),
        Model::Forest(f) => forest_shap_dense(f, row, target_class),
    }
}

/// One example of a report sample; `row` follows the model's feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub example_id: usize,
    pub row: Vec<f64>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub feature_id: FeatureId,
    pub docstring: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleAttribution {
    pub example_id: usize,
    pub label: String,
    #[serde(flatten)]
    pub attribution: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub feature_id: FeatureId,
    pub example_id: usize,
    pub value: f64,
    pub label: String,
    pub shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    pub sample_size: usize,
    /// Explained class for classification models.
    pub target_class: Option<String>,
    pub ranking: Vec<RankedFeature>,
    pub scatter: Vec<ScatterPoint>,
    pub attributions: Vec<ExampleAttribution>,
}

/// Ranks features by mean absolute SHAP over `sample` (ties by feature id),
/// keeping the first `top_n`, with scatter points for those features.
pub fn report_top_features(
    model: &Model,
    features: &[Feature],
    sample: &[SampleRow],
    top_n: usize,
    target_class: Option<(usize, String)>,
) -> Result<ShapReport, ExplainError> {
    if sample.is_empty() {
        return Err(ExplainError::EmptySample);
    }
    let target = target_class.as_ref().map_or(0, |(i, _)| *i);
    let ids = model.feature_ids();
    let attributions: Vec<ExampleAttribution> = sample
        .iter()
        .map(|s| {
            model_shap_dense(model, &s.row, target).map(|attribution| ExampleAttribution {
                example_id: s.example_id,
                label: s.label.clone(),
                attribution,
            })
        })
        .collect::<Result<_, _>>()?;

    let n = sample.len() as f64;
    let mut means: Vec<(usize, f64)> = (0..ids.len())
        .map(|j| {
            let total: f64 = attributions.iter().map(|a| a.attribution.contributions[&ids[j]].abs()).sum();
            (j, total / n)
        })
        .collect();
    means.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
    means.truncate(top_n);

    let docs: HashMap<&FeatureId, &str> = features.iter().map(|f| (&f.id, f.docstring.as_str())).collect();
    let ranking: Vec<RankedFeature> = means
        .iter()
        .enumerate()
        .map(|(r, &(j, m))| RankedFeature {
            rank: r + 1,
            feature_id: ids[j].clone(),
            docstring: docs.get(&ids[j]).copied().unwrap_or_default().to_string(),
            mean_abs_shap: m,
        })
        .collect();
    let scatter = means
        .iter()
        .flat_map(|&(j, _)| {
            sample.iter().zip(&attributions).map(move |(s, a)| ScatterPoint {
                feature_id: ids[j].clone(),
                example_id: s.example_id,
                value: s.row[j],
                label: s.label.clone(),
                shap: a.attribution.contributions[&ids[j]],
            })
        })
        .collect();
    Ok(ShapReport {
        sample_size: sample.len(),
        target_class: target_class.map(|(_, name)| name),
        ranking,
        scatter,
        attributions,
    })
}

impl ShapReport {
    /// Writes `shap_ranking.csv`, `shap_scatter.csv` and
    /// `shap_attributions.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ExplainError> {
        let io = |e: &dyn std::fmt::Display| ExplainError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(|e| io(&e))?;

        let mut ranking = std::fs::File::create(dir.join("shap_ranking.csv")).map_err(|e| io(&e))?;
        writeln!(ranking, "# sample_size={}", self.sample_size).map_err(|e| io(&e))?;
        if let Some(c) = &self.target_class {
            writeln!(ranking, "# target_class={c}").map_err(|e| io(&e))?;
        }
        let mut w = csv::Writer::from_writer(ranking);
        w.write_record(["rank", "feature_id", "docstring", "mean_abs_shap"]).map_err(|e| io(&e))?;
        for r in &self.ranking {
            w.write_record([
                r.rank.to_string(),
                r.feature_id.to_string(),
                r.docstring.clone(),
                r.mean_abs_shap.to_string(),
            ])
            .map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;

        let mut w = csv::Writer::from_path(dir.join("shap_scatter.csv")).map_err(|e| io(&e))?;
        w.write_record(["feature_id", "example_id", "value", "label", "shap"]).map_err(|e| io(&e))?;
        for p in &self.scatter {
            w.write_record([
                p.feature_id.to_string(),
                p.example_id.to_string(),
                p.value.to_string(),
                p.label.clone(),
                p.shap.to_string(),
            ])
            .map_err(|e| io(&e))?;
        }
        w.flush().map_err(|e| io(&e))?;

        let json = serde_json::to_string_pretty(self).map_err(|e| io(&e))?;
        std::fs::write(dir.join("shap_attributions.json"), json + "\n").map_err(|e| io(&e))
    }
}
