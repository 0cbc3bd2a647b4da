use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TreeError;
use crate::data::{Label, Task};

/// Classification impurity. Regression always uses population variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Entropy,
    Gini,
}

impl Criterion {
    pub(crate) fn of_counts(self, counts: &[usize], total: usize) -> f64 {
        match self {
            Criterion::Entropy => entropy_from_counts(counts, total),
            Criterion::Gini => gini_from_counts(counts, total),
        }
    }
}

/// Shannon entropy in bits.
pub fn entropy_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn gini_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Two-pass population variance.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Variance of numeric labels, or entropy (bits) of class labels.
pub fn impurity(labels: &[Label], task: Task) -> Result<f64, TreeError> {
    if labels.is_empty() {
        return Err(TreeError::EmptyLabels);
    }
    match task {
        Task::Regression => {
            let values = labels
                .iter()
                .map(|l| match l {
                    Label::Numeric(v) => Ok(*v),
                    Label::Class(_) => Err(TreeError::LabelTaskMismatch(task)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(population_variance(&values))
        }
        Task::Classification => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for l in labels {
                match l {
                    Label::Class(s) => *counts.entry(s.as_str()).or_default() += 1,
                    Label::Numeric(_) => return Err(TreeError::LabelTaskMismatch(task)),
                }
            }
            let mut counts: Vec<usize> = counts.into_values().collect();
            counts.sort_unstable();
            Ok(entropy_from_counts(&counts, labels.len()))
        }
    }
}
