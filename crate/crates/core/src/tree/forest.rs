use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grow::{grow_tree, TreeParams};
use super::impurity::Criterion;
use super::model::{lookup, DecisionTree, LeafValue, Prediction, Tree};
use super::{FeatureTable, Targets, TreeError};
use crate::data::Task;
use crate::feature::FeatureId;

/// How many columns each node may search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// `ceil(sqrt(k))` for classification, `ceil(k / 3)` for regression.
    #[default]
    Auto,
    All,
    Sqrt,
    Third,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, k: usize, task: Task) -> Option<usize> {
        let sqrt = || (k as f64).sqrt().ceil() as usize;
        let third = || k.div_ceil(3);
        let m = match self {
            FeatureSubsample::All => return None,
            FeatureSubsample::Auto => match task {
                Task::Classification => sqrt(),
                Task::Regression => third(),
            },
            FeatureSubsample::Sqrt => sqrt(),
            FeatureSubsample::Third => third(),
            FeatureSubsample::Count(n) => n,
        };
        Some(m.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Resample `n` rows with replacement for every tree.
    pub bootstrap: bool,
    pub features_per_split: FeatureSubsample,
    pub criterion: Criterion,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            max_depth: 50,
            min_leaf: 1,
            bootstrap: true,
            features_per_split: FeatureSubsample::Auto,
            criterion: Criterion::Entropy,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn tree_params(&self, k: usize, task: Task) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth.max(1),
            min_leaf: self.min_leaf.max(1),
            features_per_split: self.features_per_split.resolve(k, task),
            criterion: self.criterion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: Task,
    pub n_classes: usize,
    pub feature_ids: Vec<FeatureId>,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

/// Out-of-bag estimate over rows left out by at least one tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OobEstimate {
    Accuracy(f64),
    MeanSquaredError(f64),
}

fn canonical_mean(mut values: Vec<f64>) -> f64 {
    // Summing in sorted order makes the mean independent of tree order.
    values.sort_by(f64::total_cmp);
    let n = values.len().max(1) as f64;
    values.iter().sum::<f64>() / n
}

impl Forest {
    pub fn tree(&self, i: usize) -> DecisionTree {
        DecisionTree {
            task: self.task,
            n_classes: self.n_classes,
            feature_ids: self.feature_ids.clone(),
            tree: self.trees[i].clone(),
        }
    }

    fn combine<'a>(&self, leaves: impl Iterator<Item = &'a LeafValue>) -> Prediction {
        match self.task {
            Task::Regression => Prediction::Numeric(canonical_mean(
                leaves
                    .map(|v| match v {
                        LeafValue::Mean(m) => *m,
                        LeafValue::ClassCounts(_) => unreachable!("regression forest"),
                    })
                    .collect(),
            )),
            Task::Classification => {
                let mut votes = vec![0usize; self.n_classes];
                for leaf in leaves {
                    if let LeafValue::ClassCounts(counts) = leaf {
                        votes[LeafValue::majority(counts)] += 1;
                    }
                }
                let total = votes.iter().sum::<usize>().max(1) as f64;
                Prediction::Class {
                    class: LeafValue::majority(&votes),
                    distribution: votes.iter().map(|&v| v as f64 / total).collect(),
                }
            }
        }
    }

    /// Regression: mean of tree outputs. Classification: majority vote,
    /// ties to the class listed first in the alphabet.
    pub fn predict(&self, values: &BTreeMap<FeatureId, f64>) -> Result<Prediction, TreeError> {
        let leaves = self
            .trees
            .iter()
            .map(|t| t.route(lookup(&self.feature_ids, values)).map(|i| t.leaf_value(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.combine(leaves.into_iter()))
    }

    pub fn predict_row(&self, row: &[f64]) -> Prediction {
        self.combine(self.trees.iter().map(|t| t.predict_row(row)))
    }

    /// Mean over trees of the leaf scalar for `target_class` (the leaf mean
    /// for regression). This is the output TreeSHAP attributions add up to.
    pub fn predict_scalar_row(&self, row: &[f64], target_class: usize) -> f64 {
        canonical_mean(
            self.trees
                .iter()
                .map(|t| t.predict_row(row).scalar(target_class))
                .collect(),
        )
    }
}

fn grow_member(
    table: &FeatureTable,
    targets: &Targets,
    params: &ForestParams,
    tree_params: &TreeParams,
    index: usize,
) -> (Tree, Vec<bool>) {
    let n = table.n_rows().max(targets.len());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    let rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut in_bag = vec![false; n];
    for &r in &rows {
        in_bag[r] = true;
    }
    let tree = grow_tree(table, targets, &rows, tree_params, &mut rng).tree;
    (tree, in_bag)
}

fn fit(table: &FeatureTable, targets: &Targets, params: &ForestParams) -> (Forest, Vec<Vec<bool>>) {
    let tree_params = params.tree_params(table.n_features(), targets.task());
    let (trees, bags): (Vec<Tree>, Vec<Vec<bool>>) = (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|i| grow_member(table, targets, params, &tree_params, i))
        .unzip();
    let forest = Forest {
        task: targets.task(),
        n_classes: targets.n_classes(),
        feature_ids: table.feature_ids().to_vec(),
        params: params.clone(),
        trees,
    };
    (forest, bags)
}

/// Trains `n_trees` trees in parallel. Tree `i` draws from its own
/// ChaCha stream, so the result depends only on the inputs and the seed.
pub fn train_forest(table: &FeatureTable, targets: &Targets, params: &ForestParams) -> Forest {
    fit(table, targets, params).0
}

/// As [`train_forest`], also scoring each row with the trees that did not
/// see it. Classification aggregates leaf class proportions.
pub fn train_forest_with_oob(
    table: &FeatureTable,
    targets: &Targets,
    params: &ForestParams,
) -> (Forest, Option<OobEstimate>) {
    let (forest, bags) = fit(table, targets, params);
    let n = targets.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| table.row(i)).collect();
    let estimate = match targets {
        Targets::Classification { labels, n_classes } => {
            let mut scored = 0usize;
            let mut correct = 0usize;
            for i in 0..n {
                let mut proba = vec![0.0; *n_classes];
                let mut seen = false;
                for (tree, bag) in forest.trees.iter().zip(&bags) {
                    if !bag[i] {
                        seen = true;
                        for (p, q) in proba.iter_mut().zip(tree.predict_row(&rows[i]).distribution().unwrap_or_default()) {
                            *p += q;
                        }
                    }
                }
                if seen {
                    scored += 1;
                    let mut best = 0;
                    for c in 1..*n_classes {
                        if proba[c] > proba[best] {
                            best = c;
                        }
                    }
                    correct += usize::from(best == labels[i]);
                }
            }
            (scored > 0).then(|| OobEstimate::Accuracy(correct as f64 / scored as f64))
        }
        Targets::Regression(y) => {
            let mut scored = 0usize;
            let mut sse = 0.0;
            for i in 0..n {
                let outs: Vec<f64> = forest
                    .trees
                    .iter()
                    .zip(&bags)
                    .filter(|(_, bag)| !bag[i])
                    .map(|(t, _)| t.predict_row(&rows[i]).scalar(0))
                    .collect();
                if !outs.is_empty() {
                    scored += 1;
                    sse += (canonical_mean(outs) - y[i]).powi(2);
                }
            }
            (scored > 0).then(|| OobEstimate::MeanSquaredError(sse / scored as f64))
        }
    };
    (forest, estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureTable, Targets) {
        let a: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let labels = (0..40).map(|i| usize::from(i >= 20)).collect();
        (
            FeatureTable::anonymous(vec![a, b]),
            Targets::Classification { labels, n_classes: 2 },
        )
    }

    #[test]
    fn auto_subsampling_rule() {
        assert_eq!(FeatureSubsample::Auto.resolve(10, Task::Classification), Some(4));
        assert_eq!(FeatureSubsample::Auto.resolve(10, Task::Regression), Some(4));
        assert_eq!(FeatureSubsample::Auto.resolve(9, Task::Regression), Some(3));
        assert_eq!(FeatureSubsample::Auto.resolve(1, Task::Regression), Some(1));
        assert_eq!(FeatureSubsample::All.resolve(10, Task::Regression), None);
    }

    #[test]
    fn default_params_match_final_predictor_settings() {
        let p = ForestParams::default();
        assert_eq!((p.n_trees, p.max_depth, p.min_leaf, p.bootstrap), (500, 50, 1, true));
    }

    #[test]
    fn single_unbagged_tree_equals_grow_tree() {
        let (table, targets) = toy();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            features_per_split: FeatureSubsample::All,
            ..ForestParams::default()
        };
        let forest = train_forest(&table, &targets, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<usize> = (0..40).collect();
        let tree = grow_tree(&table, &targets, &rows, &params.tree_params(2, Task::Classification), &mut rng);
        assert_eq!(forest.trees[0], tree.tree);
        for i in 0..40 {
            let row = table.row(i);
            assert_eq!(forest.predict_row(&row).class(), tree.predict_row(&row).class());
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (table, targets) = toy();
        let params = ForestParams { n_trees: 20, seed: 11, ..ForestParams::default() };
        assert_eq!(train_forest(&table, &targets, &params), train_forest(&table, &targets, &params));
        let other = ForestParams { seed: 12, ..params.clone() };
        assert_ne!(train_forest(&table, &targets, &params), train_forest(&table, &targets, &other));
    }

    #[test]
    fn majority_vote_with_alphabet_tie_break() {
        let leaf = |c: Vec<usize>| Tree::leaf(LeafValue::ClassCounts(c), 1, 0.0);
        let mut forest = Forest {
            task: Task::Classification,
            n_classes: 2,
            feature_ids: vec![],
            params: ForestParams::default(),
            trees: vec![leaf(vec![1, 0]), leaf(vec![1, 0]), leaf(vec![0, 1])],
        };
        assert_eq!(forest.predict_row(&[]).class(), Some(0));
        forest.trees.pop();
        forest.trees.push(leaf(vec![0, 2]));
        forest.trees.push(leaf(vec![0, 2]));
        forest.trees.remove(0);
        // votes: 1 for class 0, 2 for class 1
        assert_eq!(forest.predict_row(&[]).class(), Some(1));
        forest.trees.pop();
        assert_eq!(forest.predict_row(&[]).class(), Some(0));
    }

    #[test]
    fn oob_accuracy_is_high_on_separable_data() {
        let (table, targets) = toy();
        let params = ForestParams { n_trees: 50, seed: 3, ..ForestParams::default() };
        let (_, oob) = train_forest_with_oob(&table, &targets, &params);
        match oob {
            Some(OobEstimate::Accuracy(acc)) => assert!(acc > 0.9, "{acc}"),
            other => panic!("{other:?}"),
        }
    }
}
