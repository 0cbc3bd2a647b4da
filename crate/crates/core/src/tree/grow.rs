use rand::Rng;
use serde::{Deserialize, Serialize};

use super::impurity::Criterion;
use super::model::{DecisionTree, LeafValue, Node, Tree};
use super::split::{best_split, node_impurity};
use super::{FeatureTable, Targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Columns sampled per node; `None` searches all of them.
    pub features_per_split: Option<usize>,
    pub criterion: Criterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 50,
            min_leaf: 1,
            features_per_split: None,
            criterion: Criterion::Entropy,
        }
    }
}

pub(crate) fn leaf_value(targets: &Targets, rows: &[usize]) -> LeafValue {
    match targets {
        Targets::Regression(y) => {
            let n = rows.len().max(1) as f64;
            LeafValue::Mean(rows.iter().map(|&r| y[r]).sum::<f64>() / n)
        }
        Targets::Classification { labels, n_classes } => {
            let mut counts = vec![0usize; *n_classes];
            for &r in rows {
                counts[labels[r]] += 1;
            }
            LeafValue::ClassCounts(counts)
        }
    }
}

fn is_pure(targets: &Targets, rows: &[usize]) -> bool {
    match targets {
        Targets::Regression(y) => rows.windows(2).all(|w| y[w[0]] == y[w[1]]),
        Targets::Classification { labels, .. } => rows.windows(2).all(|w| labels[w[0]] == labels[w[1]]),
    }
}

struct Grower<'a, R> {
    table: &'a FeatureTable,
    targets: &'a Targets,
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn candidates(&mut self) -> Vec<usize> {
        let k = self.table.n_features();
        match self.params.features_per_split {
            Some(m) if m < k => {
                let mut picked = rand::seq::index::sample(self.rng, k, m.max(1)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..k).collect(),
        }
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let impurity = node_impurity(self.targets, &rows, self.params.criterion);
        let count = rows.len();
        let index = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: leaf_value(self.targets, &rows),
            count,
            impurity,
        });

        let min_leaf = self.params.min_leaf.max(1);
        if depth >= self.params.max_depth || count < 2 * min_leaf || is_pure(self.targets, &rows) {
            return index;
        }
        let candidates = self.candidates();
        let Some(split) = best_split(
            self.table,
            self.targets,
            &rows,
            &candidates,
            self.params.criterion,
            min_leaf,
        ) else {
            return index;
        };

        let column = self.table.column(split.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| column[r] < split.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[index] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            count,
            impurity,
            impurity_decrease: split.impurity_decrease,
        };
        index
    }
}

/// Recursive best-split growth on `rows` (repeats allowed). Stops at
/// `max_depth`, on pure nodes, and when no valid split exists.
pub fn grow_tree<R: Rng>(
    table: &FeatureTable,
    targets: &Targets,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> DecisionTree {
    let mut grower = Grower {
        table,
        targets,
        params,
        rng,
        nodes: Vec::new(),
    };
    grower.build(rows.to_vec(), 0);
    DecisionTree {
        task: targets.task(),
        n_classes: targets.n_classes(),
        feature_ids: table.feature_ids().to_vec(),
        tree: Tree { nodes: grower.nodes },
    }
}
