use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Metrics {
    Regression {
        n: usize,
        /// Examples left out because a feature failed on them.
        excluded: usize,
        rmse: f64,
        /// `None` when either side has zero variance.
        pearson: Option<f64>,
    },
    Classification {
        n: usize,
        excluded: usize,
        accuracy: f64,
        /// Positive-class F1 for two classes, macro average otherwise.
        f1: f64,
        per_class_f1: BTreeMap<String, f64>,
    },
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let sq: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    (sq / labels.len() as f64).sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// F1 of each class treated as positive; 0 when it is never predicted and
/// never present.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<f64> {
    (0..n_classes)
        .map(|c| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fneg = 0usize;
            for (&p, &y) in predictions.iter().zip(labels) {
                match (p == c, y == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

pub fn regression_metrics(predictions: &[f64], labels: &[f64], excluded: usize) -> Metrics {
    Metrics::Regression {
        n: labels.len(),
        excluded,
        rmse: rmse(predictions, labels),
        pearson: pearson(predictions, labels),
    }
}

/// The second class is the positive one in the two-class case.
pub fn classification_metrics(predictions: &[usize], labels: &[usize], classes: &[String], excluded: usize) -> Metrics {
    let n = labels.len();
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    let per = per_class_f1(predictions, labels, classes.len());
    let f1 = match per.len() {
        2 => per[1],
        0 => 0.0,
        k => per.iter().sum::<f64>() / k as f64,
    };
    Metrics::Classification {
        n,
        excluded,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        f1,
        per_class_f1: classes.iter().cloned().zip(per).collect(),
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metrics::Regression { n, excluded, rmse, pearson } => {
                writeln!(f, "{:<12}{:>12}", "metric", "value")?;
                writeln!(f, "{:<12}{:>12}", "n", n)?;
                writeln!(f, "{:<12}{:>12}", "excluded", excluded)?;
                writeln!(f, "{:<12}{:>12.6}", "rmse", rmse)?;
                match pearson {
                    Some(r) => writeln!(f, "{:<12}{:>12.6}", "pearson", r),
                    None => writeln!(f, "{:<12}{:>12}", "pearson", "n/a"),
                }
            }
            Metrics::Classification {
                n,
                excluded,
                accuracy,
                f1,
                per_class_f1,
            } => {
                writeln!(f, "{:<12}{:>12}", "metric", "value")?;
                writeln!(f, "{:<12}{:>12}", "n", n)?;
                writeln!(f, "{:<12}{:>12}", "excluded", excluded)?;
                writeln!(f, "{:<12}{:>12.6}", "accuracy", accuracy)?;
                writeln!(f, "{:<12}{:>12.6}", "f1", f1)?;
                for (class, v) in per_class_f1 {
                    writeln!(f, "{:<12}{:>12.6}", format!("f1[{class}]"), v)?;
                }
                Ok(())
            }
        }
    }
}
