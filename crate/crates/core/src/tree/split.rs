use serde::{Deserialize, Serialize};

use super::impurity::{population_variance, Criterion};
use super::{FeatureTable, Targets};

/// A chosen (feature, threshold) test. `feature` is a column ordinal of the
/// table the split was searched on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// Label statistics of one side of a candidate split.
#[derive(Debug, Clone, Copy)]
pub enum SideStats<'a> {
    Counts { counts: &'a [usize], total: usize },
    Moments { n: usize, mean: f64, sum_sq_dev: f64 },
}

impl SideStats<'_> {
    pub fn len(&self) -> usize {
        match *self {
            SideStats::Counts { total, .. } => total,
            SideStats::Moments { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members outside the majority class, or the sum of squared deviations
    /// from the mean.
    pub fn total_error(&self) -> f64 {
        match *self {
            SideStats::Counts { counts, total } => {
                (total - counts.iter().copied().max().unwrap_or(0)) as f64
            }
            SideStats::Moments { sum_sq_dev, .. } => sum_sq_dev,
        }
    }
}

/// Threshold between two consecutive distinct sorted values, guaranteed to
/// satisfy `lo < t <= hi` so that routing reproduces the partition.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mut mid = (lo + hi) / 2.0;
    if !mid.is_finite() {
        mid = lo + (hi - lo) / 2.0;
    }
    if mid <= lo {
        hi
    } else {
        mid
    }
}

/// Decreases closer than this are treated as ties.
pub(crate) fn tie_tolerance(parent_impurity: f64) -> f64 {
    1e-12 * parent_impurity.abs().max(1.0)
}

pub(crate) fn node_impurity(targets: &Targets, rows: &[usize], criterion: Criterion) -> f64 {
    match targets {
        Targets::Regression(y) => {
            let values: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            population_variance(&values)
        }
        Targets::Classification { labels, n_classes } => {
            let mut counts = vec![0usize; *n_classes];
            for &r in rows {
                counts[labels[r]] += 1;
            }
            criterion.of_counts(&counts, rows.len())
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    fn stats(&self) -> SideStats<'static> {
        SideStats::Moments {
            n: self.n,
            mean: self.mean,
            sum_sq_dev: self.m2,
        }
    }
}

/// Exhaustive search for the split maximizing impurity decrease over the
/// candidate columns, restricted to `rows` (repeats allowed, as produced by
/// bootstrapping). Thresholds are midpoints of consecutive distinct values.
/// Ties go to the lower column ordinal, then the lower threshold. Returns
/// `None` when no split has a positive decrease with both children holding
/// at least `min_leaf` rows.
pub fn best_split(
    table: &FeatureTable,
    targets: &Targets,
    rows: &[usize],
    candidates: &[usize],
    criterion: Criterion,
    min_leaf: usize,
) -> Option<Split> {
    best_split_filtered(table, targets, rows, candidates, criterion, min_leaf, |_, _| true)
}

/// As [`best_split`], skipping candidates rejected by `accept(left, right)`.
pub fn best_split_filtered<F>(
    table: &FeatureTable,
    targets: &Targets,
    rows: &[usize],
    candidates: &[usize],
    criterion: Criterion,
    min_leaf: usize,
    accept: F,
) -> Option<Split>
where
    F: Fn(&SideStats<'_>, &SideStats<'_>) -> bool,
{
    let m = rows.len();
    let min_leaf = min_leaf.max(1);
    if m < 2 * min_leaf {
        return None;
    }
    let parent = node_impurity(targets, rows, criterion);
    let tol = tie_tolerance(parent);
    let mut features = candidates.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split> = None;
    let mut consider = |split: Split| {
        let better = match &best {
            None => split.impurity_decrease > tol,
            Some(b) => split.impurity_decrease > b.impurity_decrease + tol,
        };
        if better {
            best = Some(split);
        }
    };

    let mf = m as f64;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(m);
    for &feature in &features {
        let column = table.column(feature);
        order.clear();
        order.extend(rows.iter().map(|&r| (column[r], r)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[0].0 == order[m - 1].0 {
            continue;
        }

        match targets {
            Targets::Classification { labels, n_classes } => {
                let mut left = vec![0usize; *n_classes];
                let mut right = vec![0usize; *n_classes];
                for &(_, r) in &order {
                    right[labels[r]] += 1;
                }
                for i in 0..m - 1 {
                    let class = labels[order[i].1];
                    left[class] += 1;
                    right[class] -= 1;
                    if order[i].0 == order[i + 1].0 {
                        continue;
                    }
                    let (nl, nr) = (i + 1, m - i - 1);
                    if nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    let left_stats = SideStats::Counts { counts: &left, total: nl };
                    let right_stats = SideStats::Counts { counts: &right, total: nr };
                    let decrease = parent
                        - (nl as f64 / mf) * criterion.of_counts(&left, nl)
                        - (nr as f64 / mf) * criterion.of_counts(&right, nr);
                    if !accept(&left_stats, &right_stats) {
                        continue;
                    }
                    consider(Split {
                        feature,
                        threshold: midpoint(order[i].0, order[i + 1].0),
                        impurity_decrease: decrease,
                        left_count: nl,
                        right_count: nr,
                    });
                }
            }
            Targets::Regression(y) => {
                let mut suffix = vec![Welford::default(); m + 1];
                for i in (0..m).rev() {
                    suffix[i] = suffix[i + 1];
                    suffix[i].push(y[order[i].1]);
                }
                let mut prefix = Welford::default();
                for i in 0..m - 1 {
                    prefix.push(y[order[i].1]);
                    if order[i].0 == order[i + 1].0 {
                        continue;
                    }
                    let right = suffix[i + 1];
                    let (nl, nr) = (prefix.n, right.n);
                    if nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    let decrease = parent
                        - (nl as f64 / mf) * prefix.variance()
                        - (nr as f64 / mf) * right.variance();
                    if !accept(&prefix.stats(), &right.stats()) {
                        continue;
                    }
                    consider(Split {
                        feature,
                        threshold: midpoint(order[i].0, order[i + 1].0),
                        impurity_decrease: decrease,
                        left_count: nl,
                        right_count: nr,
                    });
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(labels: &[usize], n: usize) -> Targets {
        Targets::Classification {
            labels: labels.to_vec(),
            n_classes: n,
        }
    }

    #[test]
    fn perfect_separator() {
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let split = best_split(&table, &classes(&[0, 0, 1, 1], 2), &[0, 1, 2, 3], &[0], Criterion::Entropy, 1).unwrap();
        assert_eq!(split.feature, 0);
        assert_eq!(split.threshold, 2.5);
        assert_eq!(split.impurity_decrease, 1.0);
        assert_eq!((split.left_count, split.right_count), (2, 2));
    }

    #[test]
    fn constant_column_has_no_split() {
        let table = FeatureTable::anonymous(vec![vec![7.0; 4]]);
        assert!(best_split(&table, &classes(&[0, 1, 0, 1], 2), &[0, 1, 2, 3], &[0], Criterion::Entropy, 1).is_none());
    }

    #[test]
    fn pure_labels_have_no_split() {
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0, 3.0]]);
        let y = Targets::Regression(vec![3.0, 3.0, 3.0]);
        assert!(best_split(&table, &y, &[0, 1, 2], &[0], Criterion::Entropy, 1).is_none());
    }

    #[test]
    fn ties_prefer_lower_feature_then_lower_threshold() {
        // Both columns separate perfectly; column 0 must win.
        let table = FeatureTable::anonymous(vec![vec![10.0, 20.0, 30.0, 40.0], vec![1.0, 2.0, 3.0, 4.0]]);
        let split = best_split(&table, &classes(&[0, 0, 1, 1], 2), &[0, 1, 2, 3], &[1, 0], Criterion::Entropy, 1).unwrap();
        assert_eq!(split.feature, 0);
        // Symmetric labels: thresholds 1.5 and 3.5 tie, the lower one wins.
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0, 3.0, 4.0]]);
        let split = best_split(&table, &classes(&[1, 0, 0, 1], 2), &[0, 1, 2, 3], &[0], Criterion::Entropy, 1).unwrap();
        assert_eq!(split.threshold, 1.5);
    }

    #[test]
    fn min_leaf_is_respected() {
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        let y = classes(&[0, 1, 1, 1, 1], 2);
        let split = best_split(&table, &y, &[0, 1, 2, 3, 4], &[0], Criterion::Entropy, 2).unwrap();
        assert!(split.left_count >= 2 && split.right_count >= 2);
        assert!(best_split(&table, &y, &[0, 1, 2, 3, 4], &[0], Criterion::Entropy, 3).is_none());
    }

    #[test]
    fn repeated_rows_count_as_samples() {
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0]]);
        let split = best_split(&table, &classes(&[0, 1], 2), &[0, 0, 0, 1], &[0], Criterion::Entropy, 1).unwrap();
        assert_eq!((split.left_count, split.right_count), (3, 1));
    }

    #[test]
    fn midpoint_never_collapses_onto_lower_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo < t && t <= hi);
        assert_eq!(midpoint(2.0, 3.0), 2.5);
        assert_eq!(midpoint(f64::MAX / 1.5, f64::MAX), f64::MAX / 1.5 + (f64::MAX - f64::MAX / 1.5) / 2.0);
    }

    #[test]
    fn filter_can_veto_the_impurity_optimum() {
        // Best entropy split isolates the pure left block; the filter rejects
        // splits that leave the misclassification count unchanged.
        let table = FeatureTable::anonymous(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]]);
        let y = classes(&[0, 0, 0, 0, 0, 0, 1, 0, 1, 0], 2);
        let rows: Vec<usize> = (0..10).collect();
        let plain = best_split(&table, &y, &rows, &[0], Criterion::Entropy, 1).unwrap();
        let filtered = best_split_filtered(&table, &y, &rows, &[0], Criterion::Entropy, 1, |l, r| {
            l.total_error() + r.total_error() < 2.0
        });
        assert!(plain.impurity_decrease > 0.0);
        assert!(filtered.is_none());
    }
}
