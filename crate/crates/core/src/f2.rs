//! Global feature evolution: each iteration scores the current features with
//! forest importances and asks the proposer for a batch of new ones, showing
//! it the best-scoring features and a random sample of the rest.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::exec::{Executor, DEFAULT_VALIDATION_SAMPLE};
use crate::feature::{Feature, FeatureId, Origin, ProvenanceEntry, Representation, TrainerKind};
use crate::proposer::{build_f2_prompt, Exemplar, ProposalContext, ProposalMode, Proposer};
use crate::train::{iteration_rng, resume_from, write_json_atomic, TrainError, TrainOptions, Workspace};
use crate::tree::{mdi_importance, train_forest, Forest, ForestParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct F2Params {
    pub iterations: usize,
    pub batch_size: usize,
    pub k_top: usize,
    pub k_rand: usize,
    /// Forest retrained every iteration to score features.
    pub scoring_forest: ForestParams,
    /// Forest trained once on the final representation.
    pub final_forest: ForestParams,
    pub validation_sample: usize,
    pub seed: u64,
}

impl Default for F2Params {
    fn default() -> Self {
        F2Params {
            iterations: 100,
            batch_size: 10,
            k_top: 10,
            k_rand: 10,
            scoring_forest: ForestParams {
                n_trees: 100,
                ..ForestParams::default()
            },
            final_forest: ForestParams::default(),
            validation_sample: DEFAULT_VALIDATION_SAMPLE,
            seed: 0,
        }
    }
}

/// Indices of the `k_top` most important features (ties to the lower
/// index), then `k_rand` drawn uniformly without replacement from the rest.
pub fn select_exemplars<R: Rng>(
    features: &[FeatureId],
    importances: &BTreeMap<FeatureId, f64>,
    k_top: usize,
    k_rand: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let score = |i: usize| importances.get(&features[i]).copied().unwrap_or(0.0);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let top: Vec<usize> = order.iter().copied().take(k_top).collect();
    let mut rest: Vec<usize> = order.into_iter().skip(k_top).collect();
    rest.sort_unstable();
    let picked = rand::seq::index::sample(rng, rest.len(), k_rand.min(rest.len()));
    let random = picked.into_iter().map(|i| rest[i]).collect();
    (top, random)
}

pub const F2_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F2Checkpoint {
    pub format_version: u32,
    pub params: F2Params,
    pub n_examples: usize,
    /// Iterations completed; the next one to run.
    pub next_iteration: usize,
    pub features: Vec<Feature>,
    /// Every source hash seen so far, accepted or not.
    pub seen: Vec<FeatureId>,
    pub provenance: Vec<ProvenanceEntry>,
}

#[derive(Debug, Clone)]
pub struct F2Output {
    pub representation: Representation,
    /// Final forest over the representation, trained on the whole dataset.
    pub forest: Forest,
}

fn exemplar(f: &Feature, score: f64) -> Exemplar {
    Exemplar {
        docstring: f.docstring.clone(),
        source: f.source.clone(),
        score,
    }
}

pub fn f2_train(
    dataset: &Dataset,
    proposer: &mut dyn Proposer,
    exec: &dyn Executor,
    params: &F2Params,
    options: &TrainOptions,
) -> Result<F2Output, TrainError> {
    let mut ws = Workspace::new(dataset, exec, options.eval.clone(), params.validation_sample, params.seed)?;
    let targets = dataset.targets();

    let mut state = match resume_from::<F2Checkpoint>(options)? {
        Some(mut cp) => {
            // the iteration count may grow between runs
            let comparable = F2Params {
                iterations: params.iterations,
                ..cp.params.clone()
            };
            if cp.format_version != F2_CHECKPOINT_VERSION || comparable != *params || cp.n_examples != dataset.len() {
                return Err(TrainError::ResumeMismatch(
                    "checkpoint was written with different parameters or data".into(),
                ));
            }
            log::info!("resuming F2 at iteration {}", cp.next_iteration);
            cp.params = params.clone();
            cp
        }
        None => F2Checkpoint {
            format_version: F2_CHECKPOINT_VERSION,
            params: params.clone(),
            n_examples: dataset.len(),
            next_iteration: 0,
            features: Vec::new(),
            seen: Vec::new(),
            provenance: Vec::new(),
        },
    };
    ws.fill(&mut state.features);
    state.features.retain(Feature::is_validated);
    let mut seen: HashSet<FeatureId> = state.seen.iter().cloned().collect();

    for iteration in state.next_iteration..params.iterations {
        let mut rng = iteration_rng(params.seed, iteration);
        let ids: Vec<FeatureId> = state.features.iter().map(|f| f.id.clone()).collect();

        let (top, random, exemplar_scores) = if ids.is_empty() {
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            let scoring = ForestParams {
                seed: rng.random(),
                ..params.scoring_forest.clone()
            };
            let forest = train_forest(&ws.full_table(&ids), &targets, &scoring);
            let importances = mdi_importance(&forest);
            let (top, random) = select_exemplars(&ids, &importances, params.k_top, params.k_rand, &mut rng);
            let scored = |idx: &[usize]| -> Vec<(usize, f64)> { idx.iter().map(|&i| (i, importances[&ids[i]])).collect() };
            let (top, random) = (scored(&top), scored(&random));
            let exemplar_scores = top.iter().chain(&random).map(|&(i, s)| (ids[i].clone(), s)).collect();
            (top, random, exemplar_scores)
        };

        let ctx = ProposalContext {
            task: options.task_description.clone(),
            adapter: dataset.adapter(),
            cheatsheet: options.prompts.cheatsheet.clone(),
            iteration,
            batch_size: params.batch_size,
            mode: ProposalMode::F2 {
                top: top.iter().map(|&(i, s)| exemplar(&state.features[i], s)).collect(),
                random: random.iter().map(|&(i, s)| exemplar(&state.features[i], s)).collect(),
            },
        };
        let messages = build_f2_prompt(&ctx, &options.prompts.f2)?;
        let candidates = proposer.propose(&ctx, &messages, params.batch_size)?;

        let origin = Origin {
            trainer: TrainerKind::F2,
            iteration,
            leaf: None,
        };
        let mut proposed = Vec::new();
        let mut fresh = Vec::new();
        for c in candidates {
            let feature = Feature::new(c.source, c.docstring, origin.clone());
            proposed.push(feature.id.clone());
            if seen.insert(feature.id.clone()) {
                state.seen.push(feature.id.clone());
                fresh.push(feature);
            }
        }
        let (admitted, _) = ws.admit(fresh);
        let accepted: Vec<Feature> = admitted.into_iter().filter(Feature::is_validated).collect();
        log::info!(
            "F2 iteration {}: {} proposed, {} accepted, {} features",
            iteration + 1,
            proposed.len(),
            accepted.len(),
            state.features.len() + accepted.len()
        );
        state.provenance.push(ProvenanceEntry {
            iteration,
            leaf: None,
            exemplar_scores,
            proposed,
            accepted: accepted.iter().map(|f| f.id.clone()).collect(),
        });
        state.features.extend(accepted);
        state.next_iteration = iteration + 1;
        if let Some(path) = &options.checkpoint {
            write_json_atomic(path, &state)?;
        }
    }

    let ids: Vec<FeatureId> = state.features.iter().map(|f| f.id.clone()).collect();
    let forest = train_forest(&ws.full_table(&ids), &targets, &params.final_forest);
    let importances = mdi_importance(&forest);
    Ok(F2Output {
        representation: Representation {
            features: state.features,
            provenance: state.provenance,
            importances,
        },
        forest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::NativeExecutor;
    use crate::fixtures::{make_synthetic_task, SyntheticKind};
    use crate::proposer::{PromptSet, Script, ScriptedProposer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<FeatureId> {
        (0..n).map(|i| FeatureId::of_source(&i.to_string())).collect()
    }

    #[test]
    fn exemplar_clamping_and_order() {
        let f = ids(3);
        let imp: BTreeMap<_, _> = f.iter().cloned().zip([0.2, 0.5, 0.3]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_exemplars(&f, &imp, 10, 10, &mut rng), (vec![1, 2, 0], vec![]));
        assert_eq!(select_exemplars(&f, &imp, 1, 0, &mut rng).0, vec![1]);
        // ties go to the lower index
        let flat: BTreeMap<_, _> = f.iter().cloned().map(|id| (id, 0.0)).collect();
        assert_eq!(select_exemplars(&f, &flat, 2, 0, &mut rng).0, vec![0, 1]);
    }

    #[test]
    fn exemplar_selection_is_seeded() {
        let f = ids(20);
        let imp: BTreeMap<_, _> = f.iter().cloned().zip((0..20).map(|i| i as f64)).collect();
        let a = select_exemplars(&f, &imp, 5, 5, &mut ChaCha8Rng::seed_from_u64(4));
        let b = select_exemplars(&f, &imp, 5, 5, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.0, vec![19, 18, 17, 16, 15]);
        assert_eq!(a.1.len(), 5);
        assert!(a.1.iter().all(|i| *i < 15));
    }

    fn small_params(iterations: usize) -> F2Params {
        F2Params {
            iterations,
            scoring_forest: ForestParams { n_trees: 10, ..ForestParams::default() },
            final_forest: ForestParams { n_trees: 20, ..ForestParams::default() },
            ..F2Params::default()
        }
    }

    fn script(entries: &[&[&str]]) -> ScriptedProposer {
        ScriptedProposer::new(Script::uniform(
            entries.iter().map(|e| e.iter().map(|s| s.to_string()).collect()).collect(),
        ))
    }

    #[test]
    fn single_iteration_two_features() {
        let task = make_synthetic_task(SyntheticKind::Threshold, 60, 0).unwrap();
        let opts = TrainOptions::new("t", PromptSet::builtin(task.dataset.adapter()));
        let out = f2_train(
            &task.dataset,
            &mut script(&[&["field:a", "field:b"]]),
            &NativeExecutor::default(),
            &small_params(1),
            &opts,
        )
        .unwrap();
        assert_eq!(out.representation.features.len(), 2);
    }

    #[test]
    fn invalid_batches_leave_features_unchanged() {
        let task = make_synthetic_task(SyntheticKind::Threshold, 60, 0).unwrap();
        let opts = TrainOptions::new("t", PromptSet::builtin(task.dataset.adapter()));
        let out = f2_train(
            &task.dataset,
            &mut script(&[&["field:a"], &["throw", "nan", "field:a"], &["field:c"]]),
            &NativeExecutor::default(),
            &small_params(3),
            &opts,
        )
        .unwrap();
        let rep = out.representation;
        assert_eq!(rep.features.len(), 2);
        assert!(rep.provenance[1].accepted.is_empty());
        assert_eq!(rep.provenance[1].proposed.len(), 3);
        assert!(rep.features.iter().all(Feature::is_validated));
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let task = make_synthetic_task(SyntheticKind::Quadrant, 80, 1).unwrap();
        let entries: &[&[&str]] = &[&["field:c"], &["field:a"], &["field:b", "field:d"]];
        let dir = tempfile::tempdir().unwrap();
        let mut opts = TrainOptions::new("t", PromptSet::builtin(task.dataset.adapter()));
        opts.checkpoint = Some(dir.path().join("cp.json"));
        let exec = NativeExecutor::default();

        let full = f2_train(&task.dataset, &mut script(entries), &exec, &small_params(3), &opts).unwrap();

        std::fs::remove_file(dir.path().join("cp.json")).unwrap();
        let mut partial_params = small_params(3);
        partial_params.iterations = 2;
        f2_train(&task.dataset, &mut script(entries), &exec, &partial_params, &opts).unwrap();
        opts.resume = true;
        let resumed = f2_train(&task.dataset, &mut script(entries), &exec, &small_params(3), &opts).unwrap();

        assert_eq!(full.representation, resumed.representation);
        assert_eq!(
            serde_json::to_string(&full.forest).unwrap(),
            serde_json::to_string(&resumed.forest).unwrap()
        );
    }
}
