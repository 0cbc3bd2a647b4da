use std::fs;
use std::path::{Path, PathBuf};

use leapr_core::app::{
    cmd_eval, cmd_explain, cmd_export_matrix, cmd_train, AppError, DatasetConfig, ExplainRequest, ExplainTarget,
    Explanation, Metrics, ModelChoice, ProposerBackend, Run, RunConfig, TrainerChoice,
};
use leapr_core::data::{Adapter, Task};
use leapr_core::fixtures::{make_synthetic_task, SyntheticKind};
use leapr_core::proposer::LlmConfig;

fn write_task(dir: &Path, kind: SyntheticKind, n: usize, seed: u64) -> PathBuf {
    let task = make_synthetic_task(kind, n, seed).unwrap();
    let path = dir.join(format!("{kind}.jsonl"));
    task.dataset.write_jsonl(fs::File::create(&path).unwrap()).unwrap();
    path
}

fn config(dir: &Path, data: PathBuf, task: Task, script: &str, out: &str) -> RunConfig {
    let script_path = dir.join(format!("{out}.script.json"));
    fs::write(&script_path, script).unwrap();
    let mut c = RunConfig::new(
        DatasetConfig {
            path: data,
            adapter: Adapter::Tabular,
            task,
            label_field: "y".into(),
            classes: None,
            centipawns: false,
            holdout: None,
        },
        dir.join(out),
    );
    c.proposer.backend = ProposerBackend::Scripted;
    c.proposer.script = Some(script_path);
    c.trainer.f2.final_forest.n_trees = 25;
    c.trainer.f2.scoring_forest.n_trees = 10;
    c.trainer.did3.final_forest.n_trees = 25;
    c.executor.workers = 1;
    c
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn did3_on_threshold_task_reaches_full_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Threshold, 300, 1);
    let mut c = config(tmp.path(), data, Task::Classification, r#"[["field:a"]]"#, "run");
    c.trainer.did3.iterations = 5;
    let m = cmd_train(c, false).unwrap();
    let Metrics::Classification { accuracy, .. } = m.train.tree.unwrap() else { panic!() };
    assert_eq!(accuracy, 1.0);
    let run = tmp.path().join("run");
    for f in ["config.json", "representation.json", "model.json", "did3_tree.json", "metrics.json", "checkpoint.json", "run.log"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let written = fs::read_dir(run.join("features")).unwrap().count();
    assert_eq!(written, 1);
    let text = fs::read_to_string(fs::read_dir(run.join("features")).unwrap().next().unwrap().unwrap().path()).unwrap();
    assert!(text.starts_with("# feature "));
    assert!(text.contains("native:field:a"));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Noisy, 200, 2);
    let script = r#"{"f2": [["field:a", "field:b"], ["field:c", "field_ratio:a/b"], ["field:d"]]}"#;
    let mut dirs = Vec::new();
    for out in ["a", "b"] {
        let mut c = config(tmp.path(), data.clone(), Task::Classification, script, out);
        c.trainer.kind = TrainerChoice::F2;
        c.trainer.f2.iterations = 3;
        c.seed = 9;
        cmd_train(c, false).unwrap();
        dirs.push(tmp.path().join(out));
    }
    for f in ["metrics.json", "model.json", "representation.json"] {
        assert_eq!(bytes(&dirs[0], f), bytes(&dirs[1], f), "{f}");
    }
}

#[test]
fn f2_writes_at_most_budget_feature_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Linear, 120, 3);
    let script = r#"{"f2": [["field:a", "field:b", "field:c"], ["field:d", "throw", "constant:1"]]}"#;
    let mut c = config(tmp.path(), data, Task::Regression, script, "run");
    c.trainer.kind = TrainerChoice::F2;
    c.trainer.f2.iterations = 2;
    c.trainer.f2.batch_size = 2;
    let m = cmd_train(c, false).unwrap();
    let files = fs::read_dir(tmp.path().join("run/features")).unwrap().count();
    assert!(files <= 2 * 2);
    assert_eq!(files, m.n_features);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Noisy, 150, 4);
    let script = r#"{"f2": [["field:a"], ["field:b"], ["field:c"], ["field:d"], ["field_ratio:a/b"], ["field_ratio:c/d"], ["constant:3"], ["field_ratio:b/a"], ["field_ratio:d/c"], ["field_ratio:a/c"]]}"#;
    let make = |out: &str, iterations: usize| {
        let mut c = config(tmp.path(), data.clone(), Task::Classification, script, out);
        c.trainer.kind = TrainerChoice::F2;
        c.trainer.f2.iterations = iterations;
        c.trainer.f2.k_top = 2;
        c.trainer.f2.k_rand = 2;
        c
    };
    cmd_train(make("full", 10), false).unwrap();
    cmd_train(make("split", 5), false).unwrap();
    cmd_train(make("split", 10), true).unwrap();
    let (a, b) = (tmp.path().join("full"), tmp.path().join("split"));
    for f in ["metrics.json", "model.json", "representation.json", "checkpoint.json"] {
        assert_eq!(bytes(&a, f), bytes(&b, f), "{f}");
    }
}

#[test]
fn eval_explain_and_export_use_only_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Quadrant, 200, 5);
    let mut c = config(tmp.path(), data.clone(), Task::Classification, r#"[["field:a"], ["field:b"], ["field:b"]]"#, "run");
    c.trainer.did3.iterations = 10;
    cmd_train(c, false).unwrap();
    fs::remove_file(tmp.path().join("run.script.json")).unwrap();

    let run = Run::open(&tmp.path().join("run"), ModelChoice::Tree).unwrap();
    let Metrics::Classification { accuracy, f1, .. } = cmd_eval(&run, &data).unwrap() else { panic!() };
    assert_eq!((accuracy, f1), (1.0, 1.0));

    let request = ExplainRequest { target: ExplainTarget::Example(7), top_n: 1, class: None };
    let Explanation::Single(s) = cmd_explain(&run, &data, &request).unwrap() else { panic!() };
    let printed: f64 = s.top.iter().map(|t| t.2).sum::<f64>() + s.rest;
    assert!((printed - (s.attribution.output - s.attribution.base_value)).abs() < 1e-6);
    assert!(s.to_string().contains("other features"));

    let forest = Run::open(&tmp.path().join("run/model.json"), ModelChoice::Forest).unwrap();
    let request = ExplainRequest { target: ExplainTarget::default(), top_n: 5, class: Some("q3".into()) };
    let Explanation::Report(r) = cmd_explain(&forest, &data, &request).unwrap() else { panic!() };
    assert_eq!(r.sample_size, 150);
    assert_eq!(r.target_class.as_deref(), Some("q3"));

    let csv = tmp.path().join("m.csv");
    assert_eq!(cmd_export_matrix(&forest, &data, &csv).unwrap(), 200);
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("example_id,"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn failing_examples_are_excluded_from_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Linear, 100, 6);
    let mut c = config(tmp.path(), data.clone(), Task::Regression, r#"[["field:a"]]"#, "run");
    c.trainer.did3.iterations = 3;
    cmd_train(c, false).unwrap();
    // the same records without field `a` on the first three lines
    let text = fs::read_to_string(&data).unwrap();
    let broken: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i < 3 { l.replacen("\"a\":", "\"z\":", 1) } else { l.to_string() })
        .collect();
    let other = tmp.path().join("broken.jsonl");
    fs::write(&other, broken.join("\n") + "\n").unwrap();
    let run = Run::open(&tmp.path().join("run"), ModelChoice::Forest).unwrap();
    let Metrics::Regression { n, excluded, .. } = cmd_eval(&run, &other).unwrap() else { panic!() };
    assert_eq!((n, excluded), (97, 3));
}

#[test]
fn config_problems_exit_2_and_aborts_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_task(tmp.path(), SyntheticKind::Threshold, 50, 7);
    let mut c = config(tmp.path(), tmp.path().join("missing.jsonl"), Task::Classification, "[]", "run");
    let e = cmd_train(c.clone(), false).unwrap_err();
    assert_eq!(e.exit_code(), 2);

    c.dataset.path = data;
    c.proposer.backend = ProposerBackend::Llm;
    c.proposer.llm = LlmConfig {
        api_base: Some("http://127.0.0.1:9".into()),
        max_attempts: 1,
        ..LlmConfig::default()
    };
    let e = cmd_train(c, false).unwrap_err();
    assert!(matches!(e, AppError::Runtime(_)));
    assert_eq!(e.exit_code(), 3);
}
