//! Memoized table of feature values, keyed by feature id and example id.

use std::collections::HashMap;

use crate::feature::FeatureId;
use crate::tree::FeatureTable;

/// Sparse-fill matrix of evaluated features. Cells are written at most once
/// until their feature is invalidated.
#[derive(Debug, Clone, Default)]
pub struct FeatureMatrix {
    feature_ids: Vec<FeatureId>,
    feature_pos: HashMap<FeatureId, usize>,
    example_ids: Vec<usize>,
    example_pos: HashMap<usize, usize>,
    values: Vec<Vec<f64>>,
    filled: Vec<Vec<bool>>,
    computed: usize,
    cache_hits: usize,
}

impl FeatureMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feature_ids(&self) -> &[FeatureId] {
        &self.feature_ids
    }

    pub fn example_ids(&self) -> &[usize] {
        &self.example_ids
    }

    /// Cells written since construction.
    pub fn computed_cells(&self) -> usize {
        self.computed
    }

    /// Requested cells that were already filled.
    pub fn cache_hits(&self) -> usize {
        self.cache_hits
    }

    pub(crate) fn record_hits(&mut self, hits: usize) {
        self.cache_hits += hits;
    }

    fn feature_slot(&mut self, id: &FeatureId) -> usize {
        if let Some(&col) = self.feature_pos.get(id) {
            return col;
        }
        let col = self.feature_ids.len();
        self.feature_ids.push(id.clone());
        self.feature_pos.insert(id.clone(), col);
        self.values.push(vec![f64::NAN; self.example_ids.len()]);
        self.filled.push(vec![false; self.example_ids.len()]);
        col
    }

    fn example_slot(&mut self, id: usize) -> usize {
        if let Some(&row) = self.example_pos.get(&id) {
            return row;
        }
        let row = self.example_ids.len();
        self.example_ids.push(id);
        self.example_pos.insert(id, row);
        for (values, filled) in self.values.iter_mut().zip(&mut self.filled) {
            values.push(f64::NAN);
            filled.push(false);
        }
        row
    }

    pub fn is_filled(&self, feature: &FeatureId, example: usize) -> bool {
        self.get(feature, example).is_some()
    }

    pub fn get(&self, feature: &FeatureId, example: usize) -> Option<f64> {
        let col = *self.feature_pos.get(feature)?;
        let row = *self.example_pos.get(&example)?;
        self.filled[col][row].then(|| self.values[col][row])
    }

    /// Writes one cell. Panics if the value is not finite or the cell is
    /// already filled; both indicate a bug in the caller.
    pub fn set(&mut self, feature: &FeatureId, example: usize, value: f64) {
        assert!(value.is_finite(), "non-finite value for {feature} on example {example}");
        let col = self.feature_slot(feature);
        let row = self.example_slot(example);
        assert!(!self.filled[col][row], "cell ({feature}, {example}) written twice");
        self.values[col][row] = value;
        self.filled[col][row] = true;
        self.computed += 1;
    }

    /// Drops every cell of a feature.
    pub fn invalidate_feature(&mut self, feature: &FeatureId) {
        if let Some(&col) = self.feature_pos.get(feature) {
            self.values[col].iter_mut().for_each(|v| *v = f64::NAN);
            self.filled[col].iter_mut().for_each(|f| *f = false);
        }
    }

    /// Values of one feature over the given examples, if all are filled.
    pub fn column(&self, feature: &FeatureId, examples: &[usize]) -> Option<Vec<f64>> {
        examples.iter().map(|&e| self.get(feature, e)).collect()
    }

    /// Dense view for tree training; `None` if any requested cell is missing.
    pub fn dense(&self, features: &[FeatureId], examples: &[usize]) -> Option<FeatureTable> {
        let columns = features
            .iter()
            .map(|f| self.column(f, examples))
            .collect::<Option<Vec<_>>>()?;
        Some(FeatureTable::new(features.to_vec(), columns))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_fill_once_and_invalidate() {
        let f = FeatureId::of_source("a");
        let mut m = FeatureMatrix::new();
        m.set(&f, 3, 1.5);
        m.set(&f, 9, 2.5);
        assert_eq!(m.get(&f, 3), Some(1.5));
        assert_eq!(m.column(&f, &[9, 3]), Some(vec![2.5, 1.5]));
        assert_eq!(m.column(&f, &[9, 4]), None);
        m.invalidate_feature(&f);
        assert!(!m.is_filled(&f, 3));
        assert_eq!(m.computed_cells(), 2);
    }

    #[test]
    #[should_panic(expected = "written twice")]
    fn double_write_panics() {
        let f = FeatureId::of_source("a");
        let mut m = FeatureMatrix::new();
        m.set(&f, 0, 1.0);
        m.set(&f, 0, 1.0);
    }
}
