mod common;

use common::{empty_coalition_value, random_learnable, random_tree, shapley_by_enumeration, wrap_tree};
use leapr_core::explain::{forest_shap_dense, tree_shap_dense};
use leapr_core::tree::{train_forest, ForestParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tree_shap_equals_coalition_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case_no in 0..200 {
        let k = rng.random_range(1..=4);
        let n_classes = [0, 2, 3][case_no % 3];
        let depth = rng.random_range(1..=3);
        let tree = random_tree(&mut rng, k, depth, n_classes);
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = if n_classes == 0 { 0 } else { rng.random_range(0..n_classes) };
        let want = shapley_by_enumeration(&tree, k, &row, target);
        let base = empty_coalition_value(&tree, k, &row, target);
        let a = tree_shap_dense(&wrap_tree(tree, k, n_classes), &row, target).unwrap();
        assert!((a.base_value - base).abs() < 1e-9, "case {case_no}");
        for (j, id) in common::feature_ids(k).iter().enumerate() {
            assert!((a.contributions[id] - want[j]).abs() < 1e-9, "case {case_no} feature {j}");
        }
    }
}

#[test]
fn dummy_features_get_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        // feature 3 never appears in a 3-feature tree embedded in 4 columns
        let tree = random_tree(&mut rng, 3, 3, 0);
        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = tree_shap_dense(&wrap_tree(tree, 4, 0), &row, 0).unwrap();
        assert_eq!(a.contributions[&common::feature_ids(4)[3]], 0.0);
    }
}

#[test]
fn forest_additivity_and_single_tree_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..20 {
        let classification = i % 2 == 0;
        let (table, targets) = random_learnable(&mut rng, 80, 4, classification);
        let forest = train_forest(&table, &targets, &ForestParams { n_trees: 10, max_depth: 6, seed: i, ..ForestParams::default() });
        for r in 0..5 {
            let a = forest_shap_dense(&forest, &table.row(r), 1.min(forest.n_classes)).unwrap();
            assert!(a.additivity_gap() < 1e-6);
        }
        let single = leapr_core::tree::Forest { trees: vec![forest.trees[0].clone()], ..forest.clone() };
        let tree = leapr_core::tree::DecisionTree {
            task: forest.task,
            n_classes: forest.n_classes,
            feature_ids: forest.feature_ids.clone(),
            tree: forest.trees[0].clone(),
        };
        let row = table.row(0);
        let f = forest_shap_dense(&single, &row, 0).unwrap();
        let t = tree_shap_dense(&tree, &row, 0).unwrap();
        for (id, v) in &t.contributions {
            assert!((f.contributions[id] - v).abs() < 1e-12);
        }
    }
}
