//! Dynamic ID3: grow one decision tree, asking the proposer for new features
//! whenever the leaf with the largest training error needs a split.
//!
//! A leaf may split on any feature proposed for it or for one of its
//! ancestors (its pool). Leaves that cannot be split are marked exhausted and
//! never selected again, so every iteration either splits a leaf or retires
//! one.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{render_examples_for_prompt, Dataset, Label};
use crate::exec::{Executor, DEFAULT_VALIDATION_SAMPLE};
use crate::feature::{Feature, FeatureId, Origin, ProvenanceEntry, Representation, TrainerKind};
use crate::proposer::{
    build_did3_prompt, label_summary, Branch, PathStep, ProposalContext, ProposalMode, Proposer,
};
use crate::train::{iteration_rng, resume_from, write_json_atomic, TrainError, TrainOptions, Workspace};
use crate::tree::{
    best_split, best_split_filtered, leaf_value, node_impurity, train_forest, tree_mdi_importance, Criterion,
    DecisionTree, Forest, ForestParams, Node, Split, Targets, Tree,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Did3Params {
    pub iterations: usize,
    pub candidates_per_call: usize,
    pub min_leaf: usize,
    pub criterion: Criterion,
    /// Labeled examples of the leaf shown to the proposer.
    pub prompt_sample_size: usize,
    /// Character budget for the rendered examples.
    pub prompt_char_budget: usize,
    /// Only accept splits that lower the summed total error of the leaf.
    pub require_error_reduction: bool,
    /// Let every leaf use every validated feature, not just its ancestors'.
    pub global_pool: bool,
    pub final_forest: ForestParams,
    pub validation_sample: usize,
    pub seed: u64,
}

impl Default for Did3Params {
    fn default() -> Self {
        Did3Params {
            iterations: 1000,
            candidates_per_call: 1,
            min_leaf: 1,
            criterion: Criterion::Entropy,
            prompt_sample_size: 20,
            prompt_char_budget: 8000,
            require_error_reduction: true,
            global_pool: false,
            final_forest: ForestParams::default(),
            validation_sample: DEFAULT_VALIDATION_SAMPLE,
            seed: 0,
        }
    }
}

/// Misclassified count (members outside the majority class, ties to the
/// first class) or sum of squared deviations from the mean.
pub fn total_error(targets: &Targets, rows: &[usize]) -> f64 {
    match targets {
        Targets::Classification { labels, n_classes } => {
            let mut counts = vec![0usize; *n_classes];
            for &r in rows {
                counts[labels[r]] += 1;
            }
            (rows.len() - counts.iter().copied().max().unwrap_or(0)) as f64
        }
        Targets::Regression(y) => {
            if rows.is_empty() {
                return 0.0;
            }
            let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|&r| (y[r] - mean).powi(2)).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub feature: FeatureId,
    pub threshold: f64,
    pub impurity_decrease: f64,
    pub left: usize,
    pub right: usize,
}

/// A node of the tree under construction. Node ids grow in creation order,
/// so a lower id is an older leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowNode {
    pub parent: Option<(usize, Branch)>,
    pub count: usize,
    pub impurity: f64,
    pub total_error: f64,
    /// Dataset positions; cleared once the node splits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<usize>,
    pub pool: Vec<FeatureId>,
    pub exhausted: bool,
    pub split: Option<NodeSplit>,
}

impl GrowNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// The live leaf with the largest total error, ties to the oldest. `None`
/// when every leaf is pure or exhausted.
pub fn select_leaf(nodes: &[GrowNode]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, n) in nodes.iter().enumerate() {
        if !n.is_leaf() || n.exhausted || n.total_error <= 0.0 {
            continue;
        }
        if best.is_none_or(|b| n.total_error > nodes[b].total_error) {
            best = Some(i);
        }
    }
    best
}

pub const DID3_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Did3Checkpoint {
    pub format_version: u32,
    pub params: Did3Params,
    pub n_examples: usize,
    pub next_iteration: usize,
    /// Set once no leaf can be selected.
    pub halted: bool,
    pub nodes: Vec<GrowNode>,
    /// Every candidate seen, with its validation status.
    pub features: Vec<Feature>,
    pub provenance: Vec<ProvenanceEntry>,
    /// Summed leaf error before the first iteration and after each one.
    pub error_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Did3Output {
    /// Features used at internal nodes, in node order.
    pub representation: Representation,
    pub tree: DecisionTree,
    /// Final forest over the representation, trained on the whole dataset.
    pub forest: Forest,
    pub error_trace: Vec<f64>,
    pub iterations_run: usize,
    pub halted_early: bool,
    /// The grown tree with pools and leaf bookkeeping.
    pub nodes: Vec<GrowNode>,
}

struct Grower<'w, 'a> {
    ws: &'w Workspace<'a>,
    targets: Targets,
    params: &'w Did3Params,
}

impl Grower<'_, '_> {
    fn leaf(&self, parent: Option<(usize, Branch)>, members: Vec<usize>, pool: Vec<FeatureId>) -> GrowNode {
        GrowNode {
            parent,
            count: members.len(),
            impurity: node_impurity(&self.targets, &members, self.params.criterion),
            total_error: total_error(&self.targets, &members),
            members,
            pool,
            exhausted: false,
            split: None,
        }
    }

    fn find_split(&self, node: &GrowNode) -> Option<Split> {
        if node.pool.is_empty() {
            return None;
        }
        let table = self.ws.table(&node.pool, &node.members);
        let local = self.targets.select(&node.members);
        let rows: Vec<usize> = (0..node.members.len()).collect();
        let candidates: Vec<usize> = (0..node.pool.len()).collect();
        let min_leaf = self.params.min_leaf.max(1);
        if self.params.require_error_reduction {
            // strict drop, with slack for rounding in the running moments
            let bound = node.total_error - 1e-9 * node.total_error.max(1.0);
            best_split_filtered(&table, &local, &rows, &candidates, self.params.criterion, min_leaf, |l, r| {
                l.total_error() + r.total_error() < bound
            })
        } else {
            best_split(&table, &local, &rows, &candidates, self.params.criterion, min_leaf)
        }
    }
}

fn path_to(nodes: &[GrowNode], leaf: usize, docs: &HashMap<FeatureId, String>) -> Vec<PathStep> {
    let mut steps = Vec::new();
    let mut at = leaf;
    while let Some((parent, branch)) = nodes[at].parent {
        let split = nodes[parent].split.as_ref().expect("parents are split");
        steps.push(PathStep {
            docstring: docs.get(&split.feature).cloned().unwrap_or_else(|| split.feature.to_string()),
            threshold: split.threshold,
            branch,
        });
        at = parent;
    }
    steps.reverse();
    steps
}

fn leaf_error_sum(nodes: &[GrowNode]) -> f64 {
    nodes.iter().filter(|n| n.is_leaf()).map(|n| n.total_error).sum()
}

/// Converts the grown nodes into a standalone tree over the features used.
fn finish_tree(nodes: &[GrowNode], targets: &Targets) -> (Vec<FeatureId>, DecisionTree) {
    let mut used: Vec<FeatureId> = Vec::new();
    for n in nodes {
        if let Some(s) = &n.split {
            if !used.contains(&s.feature) {
                used.push(s.feature.clone());
            }
        }
    }
    let tree_nodes = nodes
        .iter()
        .map(|n| match &n.split {
            Some(s) => Node::Internal {
                feature: used.iter().position(|f| f == &s.feature).expect("collected above"),
                threshold: s.threshold,
                left: s.left,
                right: s.right,
                count: n.count,
                impurity: n.impurity,
                impurity_decrease: s.impurity_decrease,
            },
            None => Node::Leaf {
                value: leaf_value(targets, &n.members),
                count: n.count,
                impurity: n.impurity,
            },
        })
        .collect();
    let tree = DecisionTree {
        task: targets.task(),
        n_classes: targets.n_classes(),
        feature_ids: used.clone(),
        tree: Tree { nodes: tree_nodes },
    };
    (used, tree)
}

pub fn did3_train(
    dataset: &Dataset,
    proposer: &mut dyn Proposer,
    exec: &dyn Executor,
    params: &Did3Params,
    options: &TrainOptions,
) -> Result<Did3Output, TrainError> {
    let mut ws = Workspace::new(dataset, exec, options.eval.clone(), params.validation_sample, params.seed)?;
    let targets = dataset.targets();

    let mut state = match resume_from::<Did3Checkpoint>(options)? {
        Some(mut cp) => {
            let comparable = Did3Params {
                iterations: params.iterations,
                ..cp.params.clone()
            };
            if cp.format_version != DID3_CHECKPOINT_VERSION || comparable != *params || cp.n_examples != dataset.len() {
                return Err(TrainError::ResumeMismatch(
                    "checkpoint was written with different parameters or data".into(),
                ));
            }
            log::info!("resuming D-ID3 at iteration {}", cp.next_iteration);
            cp.params = params.clone();
            cp
        }
        None => {
            let grower = Grower { ws: &ws, targets: targets.clone(), params };
            let root = grower.leaf(None, (0..dataset.len()).collect(), Vec::new());
            let error = root.total_error;
            Did3Checkpoint {
                format_version: DID3_CHECKPOINT_VERSION,
                params: params.clone(),
                n_examples: dataset.len(),
                next_iteration: 0,
                halted: false,
                nodes: vec![root],
                features: Vec::new(),
                provenance: Vec::new(),
                error_trace: vec![error],
            }
        }
    };
    ws.fill(&mut state.features);

    let mut iterations_run = 0;
    for iteration in state.next_iteration..params.iterations {
        if state.halted {
            break;
        }
        let Some(leaf) = select_leaf(&state.nodes) else {
            log::info!("D-ID3 halted at iteration {}: no leaf left to split", iteration + 1);
            state.halted = true;
            if let Some(path) = &options.checkpoint {
                write_json_atomic(path, &state)?;
            }
            break;
        };
        iterations_run += 1;
        let mut rng = iteration_rng(params.seed, iteration);
        let docs: HashMap<FeatureId, String> = state
            .features
            .iter()
            .map(|f| (f.id.clone(), f.label().to_string()))
            .collect();

        // Prompt context for this leaf.
        let members = state.nodes[leaf].members.clone();
        let shown = {
            let k = params.prompt_sample_size.min(members.len());
            let mut picked = rand::seq::index::sample(&mut rng, members.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| ws.ids[members[i]]).collect::<Vec<_>>()
        };
        let samples = render_examples_for_prompt(dataset, &shown, params.prompt_char_budget)
            .expect("members are dataset examples");
        let member_labels: Vec<&Label> = members.iter().map(|&p| &dataset.labels()[p]).collect();
        let ctx = ProposalContext {
            task: options.task_description.clone(),
            adapter: dataset.adapter(),
            cheatsheet: options.prompts.cheatsheet.clone(),
            iteration,
            batch_size: params.candidates_per_call,
            mode: ProposalMode::Did3 {
                path: path_to(&state.nodes, leaf, &docs),
                label_summary: label_summary(&member_labels, dataset.task(), dataset.classes()),
                samples,
            },
        };
        let messages = build_did3_prompt(&ctx, &options.prompts.did3)?;
        let candidates = proposer.propose(&ctx, &messages, params.candidates_per_call)?;

        // Validate what is new; reuse what was already accepted elsewhere.
        let origin = Origin {
            trainer: TrainerKind::Did3,
            iteration,
            leaf: Some(leaf),
        };
        let known: HashMap<FeatureId, bool> = state.features.iter().map(|f| (f.id.clone(), f.is_validated())).collect();
        let mut proposed = Vec::new();
        let mut fresh = Vec::new();
        let mut offered = Vec::new();
        for c in candidates {
            let f = Feature::new(c.source, c.docstring, origin.clone());
            proposed.push(f.id.clone());
            match known.get(&f.id) {
                Some(true) => offered.push(f.id.clone()),
                Some(false) => {}
                None if fresh.iter().any(|g: &Feature| g.id == f.id) => {}
                None => fresh.push(f),
            }
        }
        let (admitted, _) = ws.admit(fresh);
        let accepted: Vec<FeatureId> = admitted.iter().filter(|f| f.is_validated()).map(|f| f.id.clone()).collect();
        offered.extend(accepted.iter().cloned());
        state.features.extend(admitted);

        let pool: Vec<FeatureId> = if params.global_pool {
            state.features.iter().filter(|f| f.is_validated()).map(|f| f.id.clone()).collect()
        } else {
            let mut pool = state.nodes[leaf].pool.clone();
            for id in offered {
                if !pool.contains(&id) {
                    pool.push(id);
                }
            }
            pool
        };
        state.nodes[leaf].pool = pool.clone();

        let grower = Grower { ws: &ws, targets: targets.clone(), params };
        match grower.find_split(&state.nodes[leaf]) {
            Some(split) => {
                let feature = pool[split.feature].clone();
                let column = ws.table(&[feature.clone()], &members);
                let values = column.column(0);
                let (left_m, right_m): (Vec<usize>, Vec<usize>) =
                    (0..members.len()).partition(|&i| values[i] < split.threshold);
                let left_m: Vec<usize> = left_m.into_iter().map(|i| members[i]).collect();
                let right_m: Vec<usize> = right_m.into_iter().map(|i| members[i]).collect();
                let left = state.nodes.len();
                let right = left + 1;
                state.nodes.push(grower.leaf(Some((leaf, Branch::Left)), left_m, pool.clone()));
                state.nodes.push(grower.leaf(Some((leaf, Branch::Right)), right_m, pool));
                let node = &mut state.nodes[leaf];
                node.members.clear();
                node.split = Some(NodeSplit {
                    feature,
                    threshold: split.threshold,
                    impurity_decrease: split.impurity_decrease,
                    left,
                    right,
                });
            }
            None => state.nodes[leaf].exhausted = true,
        }

        let error = leaf_error_sum(&state.nodes);
        log::info!(
            "D-ID3 iteration {}: leaf {} {}, training error {}",
            iteration + 1,
            leaf,
            if state.nodes[leaf].is_leaf() { "exhausted" } else { "split" },
            error
        );
        state.error_trace.push(error);
        state.provenance.push(ProvenanceEntry {
            iteration,
            leaf: Some(leaf),
            exemplar_scores: Vec::new(),
            proposed,
            accepted,
        });
        state.next_iteration = iteration + 1;
        if let Some(path) = &options.checkpoint {
            write_json_atomic(path, &state)?;
        }
    }

    let (used, tree) = finish_tree(&state.nodes, &targets);
    let importances = tree_mdi_importance(&used, &tree.tree);
    let by_id: HashMap<&FeatureId, &Feature> = state.features.iter().map(|f| (&f.id, f)).collect();
    let features: Vec<Feature> = used.iter().map(|id| by_id[id].clone()).collect();
    let forest = train_forest(&ws.full_table(&used), &targets, &params.final_forest);
    debug_assert_eq!(used.iter().collect::<BTreeSet<_>>().len(), used.len());
    Ok(Did3Output {
        representation: Representation {
            features,
            provenance: state.provenance,
            importances,
        },
        tree,
        forest,
        error_trace: state.error_trace,
        iterations_run,
        halted_early: state.halted,
        nodes: state.nodes,
    })
}
