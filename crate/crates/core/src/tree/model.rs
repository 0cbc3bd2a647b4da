use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Forest, TreeError};
use crate::data::Task;
use crate::feature::FeatureId;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafValue {
    Mean(f64),
    ClassCounts(Vec<usize>),
}

impl LeafValue {
    /// Majority class, ties to the lower class index.
    pub fn majority(counts: &[usize]) -> usize {
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }

    pub fn distribution(&self) -> Option<Vec<f64>> {
        match self {
            LeafValue::Mean(_) => None,
            LeafValue::ClassCounts(counts) => {
                let total: usize = counts.iter().sum();
                Some(counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect())
            }
        }
    }

    /// Scalar output used for explanation: the mean, or the fraction of the
    /// leaf's training rows in `target_class`.
    pub fn scalar(&self, target_class: usize) -> f64 {
        match self {
            LeafValue::Mean(v) => *v,
            LeafValue::ClassCounts(counts) => {
                let total: usize = counts.iter().sum();
                counts.get(target_class).copied().unwrap_or(0) as f64 / total.max(1) as f64
            }
        }
    }
}

/// Tree node; `count` is the number of (possibly repeated) training rows that
/// reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        count: usize,
        impurity: f64,
        impurity_decrease: f64,
    },
    Leaf {
        value: LeafValue,
        count: usize,
        impurity: f64,
    },
}

impl Node {
    pub fn count(&self) -> usize {
        match self {
            Node::Internal { count, .. } | Node::Leaf { count, .. } => *count,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Bare node array, root at index 0. Feature indices refer to the owning
/// model's feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: LeafValue, count: usize, impurity: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf {
                value,
                count,
                impurity,
            }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Feature ordinals tested anywhere in the tree.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Index of the leaf reached by `value_of`, which returns the value of a
    /// feature ordinal or an error.
    pub fn route<E>(&self, mut value_of: impl FnMut(usize) -> Result<f64, E>) -> Result<usize, E> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return Ok(i),
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if value_of(*feature)? < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_value(&self, i: usize) -> &LeafValue {
        match &self.nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Internal { .. } => panic!("node {i} is not a leaf"),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> &LeafValue {
        let leaf = self
            .route::<std::convert::Infallible>(|f| Ok(row[f]))
            .unwrap_or_else(|e| match e {});
        self.leaf_value(leaf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Numeric(f64),
    /// Predicted class index plus a distribution over the alphabet: leaf
    /// class proportions for a tree, vote shares for a forest.
    Class { class: usize, distribution: Vec<f64> },
}

impl Prediction {
    pub fn numeric(&self) -> Option<f64> {
        match self {
            Prediction::Numeric(v) => Some(*v),
            Prediction::Class { .. } => None,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Class { class, .. } => Some(*class),
            Prediction::Numeric(_) => None,
        }
    }
}

/// Looks up each feature of `feature_ids` in `values`, lazily along a path.
pub(crate) fn lookup<'a>(
    feature_ids: &'a [FeatureId],
    values: &'a BTreeMap<FeatureId, f64>,
) -> impl FnMut(usize) -> Result<f64, TreeError> + 'a {
    move |f| {
        let id = &feature_ids[f];
        match values.get(id) {
            None => Err(TreeError::MissingFeature(id.clone())),
            Some(v) if !v.is_finite() => Err(TreeError::NonFiniteFeature(id.clone())),
            Some(v) => Ok(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub task: Task,
    pub n_classes: usize,
    pub feature_ids: Vec<FeatureId>,
    pub tree: Tree,
}

impl DecisionTree {
    fn to_prediction(&self, value: &LeafValue) -> Prediction {
        match value {
            LeafValue::Mean(v) => Prediction::Numeric(*v),
            LeafValue::ClassCounts(counts) => Prediction::Class {
                class: LeafValue::majority(counts),
                distribution: value.distribution().unwrap_or_default(),
            },
        }
    }

    pub fn predict(&self, values: &BTreeMap<FeatureId, f64>) -> Result<Prediction, TreeError> {
        let leaf = self.tree.route(lookup(&self.feature_ids, values))?;
        Ok(self.to_prediction(self.tree.leaf_value(leaf)))
    }

    pub fn predict_row(&self, row: &[f64]) -> Prediction {
        self.to_prediction(self.tree.predict_row(row))
    }
}

/// Any trained predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Tree(DecisionTree),
    Forest(Forest),
}

impl Model {
    pub fn task(&self) -> Task {
        match self {
            Model::Tree(t) => t.task,
            Model::Forest(f) => f.task,
        }
    }

    pub fn feature_ids(&self) -> &[FeatureId] {
        match self {
            Model::Tree(t) => &t.feature_ids,
            Model::Forest(f) => &f.feature_ids,
        }
    }

    pub fn predict(&self, values: &BTreeMap<FeatureId, f64>) -> Result<Prediction, TreeError> {
        match self {
            Model::Tree(t) => t.predict(values),
            Model::Forest(f) => f.predict(values),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Prediction {
        match self {
            Model::Tree(t) => t.predict_row(row),
            Model::Forest(f) => f.predict_row(row),
        }
    }
}

/// Versioned on-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: Model,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model,
        }
    }
}
