//! Decision trees and random forests over evaluated feature columns.
//!
//! Routing is fixed across the crate: a value strictly below the threshold
//! goes left, anything else (including equality) goes right.

mod forest;
mod grow;
mod importance;
mod impurity;
mod model;
mod split;

pub use forest::{train_forest, train_forest_with_oob, FeatureSubsample, Forest, ForestParams, OobEstimate};
pub use grow::{grow_tree, TreeParams};
pub use importance::{mdi_importance, tree_mdi_importance};
pub use impurity::{entropy_from_counts, gini_from_counts, impurity, population_variance, Criterion};
pub use model::{DecisionTree, LeafValue, Model, ModelFile, Node, Prediction, Tree, MODEL_FORMAT_VERSION};
pub use split::{best_split, best_split_filtered, midpoint, SideStats, Split};

pub(crate) use grow::leaf_value;
pub(crate) use split::node_impurity;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::feature::FeatureId;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TreeError {
    #[error("impurity of an empty label list")]
    EmptyLabels,
    #[error("label does not match the {0} task")]
    LabelTaskMismatch(Task),
    #[error("missing value for feature {0} on the routing path")]
    MissingFeature(FeatureId),
    #[error("non-finite value for feature {0}")]
    NonFiniteFeature(FeatureId),
    #[error("class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
}

/// Training labels in numeric form: class indices into the label alphabet,
/// or real values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { .. } => Task::Classification,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Targets::Regression(_) => 0,
            Targets::Classification { n_classes, .. } => *n_classes,
        }
    }

    /// Targets at the given row positions.
    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Regression(v) => Targets::Regression(rows.iter().map(|&r| v[r]).collect()),
            Targets::Classification { labels, n_classes } => Targets::Classification {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                n_classes: *n_classes,
            },
        }
    }
}

/// Dense column-major table of feature values; column `j` belongs to
/// `feature_ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    feature_ids: Vec<FeatureId>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureTable {
    pub fn new(feature_ids: Vec<FeatureId>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(feature_ids.len(), columns.len(), "one column per feature id");
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n_rows), "ragged feature table");
        FeatureTable {
            feature_ids,
            columns,
            n_rows,
        }
    }

    /// A table with no features but a known number of rows.
    pub fn empty(n_rows: usize) -> Self {
        FeatureTable {
            feature_ids: Vec::new(),
            columns: Vec::new(),
            n_rows,
        }
    }

    /// Table whose features are named after their column position.
    pub fn anonymous(columns: Vec<Vec<f64>>) -> Self {
        let ids = (0..columns.len())
            .map(|j| FeatureId::of_source(&format!("column:{j}")))
            .collect();
        FeatureTable::new(ids, columns)
    }

    pub fn feature_ids(&self) -> &[FeatureId] {
        &self.feature_ids
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}
