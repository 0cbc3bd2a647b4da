//! Brute-force oracles and random instance generators shared by the
//! integration tests and the acceptance binary.
#![allow(dead_code)]

use leapr_core::data::Task;
use leapr_core::feature::FeatureId;
use leapr_core::tree::{Criterion, DecisionTree, FeatureTable, LeafValue, Node, Targets, Tree};
use rand::Rng;

/// Split chosen by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.log2();
        }
    }
    h
}

fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

fn variance(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
}

fn impurity_of(targets: &Targets, rows: &[usize], criterion: Criterion) -> f64 {
    match targets {
        Targets::Regression(y) => variance(&rows.iter().map(|&r| y[r]).collect::<Vec<_>>()),
        Targets::Classification { labels, n_classes } => {
            let mut counts = vec![0; *n_classes];
            for &r in rows {
                counts[labels[r]] += 1;
            }
            match criterion {
                Criterion::Gini => gini(&counts),
                _ => entropy(&counts),
            }
        }
    }
}

/// Tries every midpoint of every column, recomputing both children from
/// scratch. Ties within `1e-12 * max(parent, 1)` keep the earlier candidate
/// in (column, threshold) order.
pub fn brute_force_split(
    columns: &[Vec<f64>],
    targets: &Targets,
    rows: &[usize],
    criterion: Criterion,
    min_leaf: usize,
) -> Option<OracleSplit> {
    let parent = impurity_of(targets, rows, criterion);
    let tol = 1e-12 * parent.abs().max(1.0);
    let m = rows.len() as f64;
    let mut best: Option<OracleSplit> = None;
    for (j, col) in columns.iter().enumerate() {
        let mut values: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = rows.iter().copied().filter(|&r| col[r] < t).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&r| col[r] >= t).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let decrease = parent
                - left.len() as f64 / m * impurity_of(targets, &left, criterion)
                - right.len() as f64 / m * impurity_of(targets, &right, criterion);
            let better = match &best {
                None => decrease > tol,
                Some(b) => decrease > b.decrease + tol,
            };
            if better {
                best = Some(OracleSplit { feature: j, threshold: t, decrease });
            }
        }
    }
    best
}

/// A small random dataset with few distinct values, so ties are common.
pub struct RandomCase {
    pub columns: Vec<Vec<f64>>,
    pub targets: Targets,
    pub rows: Vec<usize>,
    pub criterion: Criterion,
    pub min_leaf: usize,
}

impl RandomCase {
    pub fn table(&self) -> FeatureTable {
        FeatureTable::anonymous(self.columns.clone())
    }
}

pub fn random_case<R: Rng>(rng: &mut R) -> RandomCase {
    let n = rng.random_range(2..=200);
    let k = rng.random_range(1..=8);
    let levels = rng.random_range(2..=12);
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25 - 1.0).collect())
        .collect();
    let targets = if rng.random_bool(0.5) {
        let n_classes = rng.random_range(2..=4);
        Targets::Classification {
            labels: (0..n).map(|_| rng.random_range(0..n_classes)).collect(),
            n_classes,
        }
    } else {
        Targets::Regression((0..n).map(|_| rng.random_range(-4i32..=4) as f64 * 0.5).collect())
    };
    // row multisets as produced by bootstrapping, or the plain index set
    let rows: Vec<usize> = if rng.random_bool(0.5) {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    RandomCase {
        columns,
        targets,
        rows,
        criterion: if rng.random_bool(0.5) { Criterion::Entropy } else { Criterion::Gini },
        min_leaf: rng.random_range(1..=3),
    }
}

/// `E[f(x) | x_S]` following the training counts below nodes whose
/// feature is outside `S`.
fn conditional_expectation(tree: &Tree, node: usize, row: &[f64], in_s: &[bool], target: usize) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => value.scalar(target),
        Node::Internal { feature, threshold, left, right, count, .. } => {
            if in_s[*feature] {
                let next = if row[*feature] < *threshold { *left } else { *right };
                conditional_expectation(tree, next, row, in_s, target)
            } else {
                let n = *count as f64;
                let wl = tree.nodes[*left].count() as f64 / n;
                let wr = tree.nodes[*right].count() as f64 / n;
                wl * conditional_expectation(tree, *left, row, in_s, target)
                    + wr * conditional_expectation(tree, *right, row, in_s, target)
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Exact Shapley values by enumerating all `2^k` coalitions.
pub fn shapley_by_enumeration(tree: &Tree, k: usize, row: &[f64], target: usize) -> Vec<f64> {
    let value = |mask: usize| {
        let in_s: Vec<bool> = (0..k).map(|j| mask & (1 << j) != 0).collect();
        conditional_expectation(tree, 0, row, &in_s, target)
    };
    let mut phi = vec![0.0; k];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..(1usize << k) {
            if mask & (1 << i) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(k - s - 1) / factorial(k);
            *p += w * (value(mask | (1 << i)) - value(mask));
        }
    }
    phi
}

pub fn empty_coalition_value(tree: &Tree, k: usize, row: &[f64], target: usize) -> f64 {
    conditional_expectation(tree, 0, row, &vec![false; k], target)
}

/// Random tree of depth at most `max_depth` over `k` features; counts are
/// consistent (each internal count is the sum of its children's). Features
/// may repeat along a path.
pub fn random_tree<R: Rng>(rng: &mut R, k: usize, max_depth: usize, n_classes: usize) -> Tree {
    fn build<R: Rng>(rng: &mut R, nodes: &mut Vec<Node>, depth: usize, max_depth: usize, k: usize, n_classes: usize) -> usize {
        let at = nodes.len();
        if depth == max_depth || (depth > 0 && rng.random_bool(0.25)) {
            let value = if n_classes == 0 {
                LeafValue::Mean(rng.random_range(-2.0..2.0))
            } else {
                LeafValue::ClassCounts((0..n_classes).map(|_| rng.random_range(0..6)).collect())
            };
            let count = rng.random_range(1..=20);
            nodes.push(Node::Leaf { value, count, impurity: 0.0 });
            return at;
        }
        nodes.push(Node::Leaf { value: LeafValue::Mean(0.0), count: 0, impurity: 0.0 });
        let feature = rng.random_range(0..k);
        let threshold = rng.random_range(-1.0..1.0);
        let left = build(rng, nodes, depth + 1, max_depth, k, n_classes);
        let right = build(rng, nodes, depth + 1, max_depth, k, n_classes);
        let count = nodes[left].count() + nodes[right].count();
        nodes[at] = Node::Internal {
            feature,
            threshold,
            left,
            right,
            count,
            impurity: 1.0,
            impurity_decrease: 0.5,
        };
        at
    }
    let mut nodes = Vec::new();
    build(rng, &mut nodes, 0, max_depth, k, n_classes);
    Tree { nodes }
}

pub fn feature_ids(k: usize) -> Vec<FeatureId> {
    (0..k).map(|j| FeatureId::of_source(&format!("native:field:f{j}"))).collect()
}

pub fn wrap_tree(tree: Tree, k: usize, n_classes: usize) -> DecisionTree {
    DecisionTree {
        task: if n_classes == 0 { Task::Regression } else { Task::Classification },
        n_classes,
        feature_ids: feature_ids(k),
        tree,
    }
}

/// Labels of a random learnable dataset: a noisy function of the first
/// two columns.
pub fn random_learnable<R: Rng>(rng: &mut R, n: usize, k: usize, classification: bool) -> (FeatureTable, Targets) {
    let columns: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets = if classification {
        Targets::Classification {
            labels: (0..n)
                .map(|i| usize::from(columns[0][i] + 0.5 * columns[k.min(2) - 1][i] + rng.random_range(-0.2..0.2) > 0.0))
                .collect(),
            n_classes: 2,
        }
    } else {
        Targets::Regression((0..n).map(|i| columns[0][i] * 2.0 - columns[k.min(2) - 1][i] + rng.random_range(-0.1..0.1)).collect())
    };
    (FeatureTable::new(feature_ids(k), columns), targets)
}
