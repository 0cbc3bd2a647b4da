use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use super::{ExecFailure, Executor, FailureKind};
use crate::data::Example;
use crate::feature::{Feature, FeatureId, FeatureStatus};
use crate::matrix::FeatureMatrix;

/// What to do when a validated feature fails on an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    /// Invalidate every cell of the feature and mark it rejected.
    #[default]
    Quarantine,
    /// Leave the failing cells unfilled and keep the feature.
    SkipCells,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    /// Concurrent evaluation jobs.
    pub parallelism: usize,
    /// Examples per job.
    pub chunk_size: usize,
    pub policy: FailurePolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            parallelism: thread::available_parallelism().map_or(1, |n| n.get()),
            chunk_size: 256,
            policy: FailurePolicy::Quarantine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedCell {
    pub feature_id: FeatureId,
    pub example_id: usize,
    pub failure: ExecFailure,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOutcome {
    /// Cells written by this call.
    pub computed: usize,
    /// Requested cells that were already filled.
    pub cache_hits: usize,
    pub quarantined: Vec<FeatureId>,
    pub failures: Vec<FailedCell>,
}

struct Job {
    feature: usize,
    /// Positions into the example slice.
    rows: Vec<usize>,
}

type JobResult = Vec<Result<f64, ExecFailure>>;

fn finite(v: f64) -> Result<f64, ExecFailure> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExecFailure::new(FailureKind::NonFinite, format!("returned {v}")))
    }
}

/// Evaluates one chunk. With `stop_early` the result ends at the first
/// failure; otherwise it has one entry per example.
fn run_job(exec: &dyn Executor, feature: &FeatureId, examples: &[&Example], rows: &[usize], stop_early: bool) -> JobResult {
    let payloads: Vec<_> = rows.iter().map(|&r| &examples[r].payload).collect();
    let whole = exec.eval(feature, &payloads);
    let mut out = Vec::with_capacity(rows.len());
    match whole {
        Ok(values) if values.len() == rows.len() => {
            for v in values {
                let cell = finite(v);
                let failed = cell.is_err();
                out.push(cell);
                if failed && stop_early {
                    break;
                }
            }
            out
        }
        Err(ExecFailure { example_index: Some(i), .. }) if stop_early && i < rows.len() => {
            // only the failure matters: the feature is about to be dropped
            let failure = whole.unwrap_err();
            out.extend((0..i).map(|_| Ok(f64::NAN)));
            out.push(Err(ExecFailure { example_index: None, ..failure }));
            out
        }
        _ => {
            // locate failures one example at a time
            for p in payloads {
                let cell = exec.eval(feature, &[p]).and_then(|v| match v.as_slice() {
                    [x] => finite(*x),
                    _ => Err(ExecFailure::new(FailureKind::RuntimeException, "wrong number of values")),
                });
                let failed = cell.is_err();
                out.push(cell);
                if failed && stop_early {
                    break;
                }
            }
            out
        }
    }
}

/// Fills the missing cells of every validated feature over `examples`.
///
/// Only unfilled cells are computed and the result does not depend on
/// `parallelism`. Features that are not validated are skipped. A feature that
/// cannot be loaded, or fails on some example under
/// [`FailurePolicy::Quarantine`], loses all its cells and is marked rejected.
pub fn evaluate_matrix(
    features: &mut [Feature],
    examples: &[&Example],
    exec: &dyn Executor,
    matrix: &mut FeatureMatrix,
    options: &EvalOptions,
) -> EvalOutcome {
    let mut outcome = EvalOutcome::default();
    let chunk = options.chunk_size.max(1);
    let mut jobs = Vec::new();
    let mut load_failures: Vec<(usize, ExecFailure)> = Vec::new();

    for (fi, feature) in features.iter().enumerate() {
        if !feature.is_validated() {
            continue;
        }
        let missing: Vec<usize> = (0..examples.len())
            .filter(|&r| !matrix.is_filled(&feature.id, examples[r].id))
            .collect();
        outcome.cache_hits += examples.len() - missing.len();
        if missing.is_empty() {
            continue;
        }
        if let Err(e) = exec.load(&feature.id, &feature.source) {
            load_failures.push((fi, e));
            continue;
        }
        for rows in missing.chunks(chunk) {
            jobs.push(Job {
                feature: fi,
                rows: rows.to_vec(),
            });
        }
    }
    matrix.record_hits(outcome.cache_hits);

    let stop_early = options.policy == FailurePolicy::Quarantine;
    let ids: Vec<FeatureId> = features.iter().map(|f| f.id.clone()).collect();
    let next = AtomicUsize::new(0);
    let mut results: Vec<Option<JobResult>> = (0..jobs.len()).map(|_| None).collect();
    let threads = options.parallelism.max(1).min(jobs.len().max(1));
    let finished: Vec<Vec<(usize, JobResult)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let j = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(j) else { break };
                        done.push((j, run_job(exec, &ids[job.feature], examples, &job.rows, stop_early)));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    for (j, r) in finished.into_iter().flatten() {
        results[j] = Some(r);
    }

    // Apply per feature, in feature order then example order.
    let mut by_feature: Vec<Vec<(usize, Result<f64, ExecFailure>)>> = vec![Vec::new(); features.len()];
    for (job, result) in jobs.iter().zip(results) {
        let result = result.expect("every job ran");
        for (&row, cell) in job.rows.iter().zip(result) {
            by_feature[job.feature].push((row, cell));
        }
    }
    for (fi, failure) in load_failures {
        quarantine(&mut features[fi], matrix, &mut outcome, None, failure);
    }
    for (fi, cells) in by_feature.into_iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        let first_failure = cells.iter().find(|(_, c)| c.is_err()).map(|(r, c)| (*r, c.clone().unwrap_err()));
        match (options.policy, first_failure) {
            (FailurePolicy::Quarantine, Some((row, failure))) => {
                quarantine(&mut features[fi], matrix, &mut outcome, Some(examples[row].id), failure);
            }
            _ => {
                for (row, cell) in cells {
                    let example_id = examples[row].id;
                    match cell {
                        Ok(v) => {
                            matrix.set(&features[fi].id, example_id, v);
                            outcome.computed += 1;
                        }
                        Err(failure) => outcome.failures.push(FailedCell {
                            feature_id: features[fi].id.clone(),
                            example_id,
                            failure,
                        }),
                    }
                }
            }
        }
    }
    outcome
}

fn quarantine(
    feature: &mut Feature,
    matrix: &mut FeatureMatrix,
    outcome: &mut EvalOutcome,
    example_id: Option<usize>,
    failure: ExecFailure,
) {
    log::warn!("quarantining feature {}: {}", feature.id, failure);
    matrix.invalidate_feature(&feature.id);
    feature.status = FeatureStatus::Rejected {
        reason: failure.kind,
        message: failure.message.clone(),
    };
    outcome.quarantined.push(feature.id.clone());
    if let Some(example_id) = example_id {
        outcome.failures.push(FailedCell {
            feature_id: feature.id.clone(),
            example_id,
            failure,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Payload;
    use crate::exec::NativeExecutor;
    use crate::feature::Origin;
    use crate::fixtures::native_source;

    fn validated(name: &str) -> Feature {
        let mut f = Feature::new(native_source(name).unwrap(), name, Origin::manual());
        f.status = FeatureStatus::Validated;
        f
    }

    fn rows(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                id: i,
                payload: Payload::Tabular(vec![("a".into(), i as f64), ("b".into(), (i % 3) as f64)]),
            })
            .collect()
    }

    fn opts(parallelism: usize, chunk_size: usize, policy: FailurePolicy) -> EvalOptions {
        EvalOptions { parallelism, chunk_size, policy }
    }

    #[test]
    fn parallelism_does_not_change_the_matrix() {
        let exs = rows(4);
        let refs: Vec<_> = exs.iter().collect();
        let mut results = Vec::new();
        for p in [1, 8] {
            let mut fs = vec![validated("field:a"), validated("field:b"), validated("constant:2")];
            let mut m = FeatureMatrix::new();
            let out = evaluate_matrix(&mut fs, &refs, &NativeExecutor::default(), &mut m, &opts(p, 1, FailurePolicy::Quarantine));
            assert_eq!(out.computed, 12);
            let ids: Vec<_> = fs.iter().map(|f| f.id.clone()).collect();
            results.push(m.dense(&ids, &[0, 1, 2, 3]).unwrap());
        }
        assert_eq!(results[0], results[1]);
    }

    #[test]
    fn only_missing_cells_are_computed() {
        let exs = rows(5);
        let mut fs = vec![validated("field:a"), validated("field:b"), validated("constant:2")];
        let mut m = FeatureMatrix::new();
        let exec = NativeExecutor::default();
        let first: Vec<_> = exs[..4].iter().collect();
        evaluate_matrix(&mut fs, &first, &exec, &mut m, &EvalOptions::default());
        let all: Vec<_> = exs.iter().collect();
        let out = evaluate_matrix(&mut fs, &all, &exec, &mut m, &EvalOptions::default());
        assert_eq!(out.computed, 3);
        assert_eq!(out.cache_hits, 12);
        assert_eq!(m.cache_hits(), 12);
        assert_eq!(m.computed_cells(), 15);
    }

    #[test]
    fn late_failure_quarantines_the_feature() {
        let exs = rows(6);
        let refs: Vec<_> = exs.iter().collect();
        let mut fs = vec![validated("field_ratio:a/b"), validated("field:a")];
        let mut m = FeatureMatrix::new();
        // b is 0 for examples 0 and 3
        let out = evaluate_matrix(&mut fs, &refs, &NativeExecutor::default(), &mut m, &opts(3, 2, FailurePolicy::Quarantine));
        assert_eq!(out.quarantined, vec![fs[0].id.clone()]);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].example_id, 0);
        assert!(matches!(fs[0].status, FeatureStatus::Rejected { reason: FailureKind::RuntimeException, .. }));
        assert!(m.column(&fs[0].id, &[1]).is_none());
        assert_eq!(m.column(&fs[1].id, &[0, 1, 2, 3, 4, 5]).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn skip_cells_keeps_the_feature() {
        let exs = rows(6);
        let refs: Vec<_> = exs.iter().collect();
        let mut fs = vec![validated("field_ratio:a/b")];
        let mut m = FeatureMatrix::new();
        let out = evaluate_matrix(&mut fs, &refs, &NativeExecutor::default(), &mut m, &opts(2, 4, FailurePolicy::SkipCells));
        assert!(out.quarantined.is_empty());
        let failed: Vec<_> = out.failures.iter().map(|c| c.example_id).collect();
        assert_eq!(failed, vec![0, 3]);
        assert_eq!(m.get(&fs[0].id, 4), Some(4.0));
        assert!(fs[0].is_validated());
    }

    #[test]
    fn unvalidated_features_are_ignored() {
        let exs = rows(2);
        let refs: Vec<_> = exs.iter().collect();
        let mut f = validated("field:a");
        f.status = FeatureStatus::Candidate;
        let mut m = FeatureMatrix::new();
        let out = evaluate_matrix(std::slice::from_mut(&mut f), &refs, &NativeExecutor::default(), &mut m, &EvalOptions::default());
        assert_eq!(out.computed, 0);
        assert!(m.feature_ids().is_empty());
    }

    #[test]
    fn chess_material_matches_hand_counts() {
        let boards = [
            ("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1", 0.0),
            ("4k3/8/8/8/8/8/8/3QK3 w - - 0 1", 9.0),
            ("4k3/8/8/8/8/8/8/R3K2R w KQ - 0 1", 10.0),
            ("rn2k3/8/8/8/8/8/PP6/4K3 b - - 0 1", -6.0),
            ("4k3/2b5/8/8/8/8/8/2N1K3 w - - 0 1", 0.0),
        ];
        let exs: Vec<_> = boards
            .iter()
            .enumerate()
            .map(|(i, (fen, _))| Example { id: i, payload: Payload::Board(fen.to_string()) })
            .collect();
        let refs: Vec<_> = exs.iter().collect();
        let mut fs = vec![validated("material_difference")];
        let mut m = FeatureMatrix::new();
        evaluate_matrix(&mut fs, &refs, &NativeExecutor::default(), &mut m, &EvalOptions::default());
        let want: Vec<f64> = boards.iter().map(|b| b.1).collect();
        assert_eq!(m.column(&fs[0].id, &[0, 1, 2, 3, 4]).unwrap(), want);
    }
}
