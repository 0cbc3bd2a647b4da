use std::collections::BTreeMap;

use super::model::{Node, Tree};
use super::Forest;
use crate::feature::FeatureId;

/// Unnormalized per-tree scores: sum over split nodes of
/// `(node_count / root_count) * impurity_decrease`.
fn tree_scores(tree: &Tree, k: usize) -> Vec<f64> {
    let mut scores = vec![0.0; k];
    let root = tree.nodes.first().map_or(0, Node::count).max(1) as f64;
    for node in &tree.nodes {
        if let Node::Internal {
            feature,
            count,
            impurity_decrease,
            ..
        } = node
        {
            scores[*feature] += (*count as f64 / root) * impurity_decrease;
        }
    }
    scores
}

fn normalize(feature_ids: &[FeatureId], mut scores: Vec<f64>) -> BTreeMap<FeatureId, f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|s| *s /= total);
    }
    feature_ids.iter().cloned().zip(scores).collect()
}

/// Mean decrease in impurity, averaged over trees and normalized to sum to
/// one whenever any split exists. Every feature of the forest is present in
/// the map; unused ones score 0.
pub fn mdi_importance(forest: &Forest) -> BTreeMap<FeatureId, f64> {
    let k = forest.feature_ids.len();
    let mut sums = vec![0.0; k];
    for tree in &forest.trees {
        for (s, t) in sums.iter_mut().zip(tree_scores(tree, k)) {
            *s += t;
        }
    }
    let n = forest.trees.len().max(1) as f64;
    normalize(&forest.feature_ids, sums.into_iter().map(|s| s / n).collect())
}

pub fn tree_mdi_importance(feature_ids: &[FeatureId], tree: &Tree) -> BTreeMap<FeatureId, f64> {
    normalize(feature_ids, tree_scores(tree, feature_ids.len()))
}
