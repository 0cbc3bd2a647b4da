use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn leapr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leapr"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn setup(dir: &Path) {
    let mut data = String::new();
    for i in 0..120 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.91).cos();
        data.push_str(&format!("{{\"x\": {{\"a\": {a}, \"b\": {b}}}, \"y\": \"{}\"}}\n", u8::from(a > 0.0)));
    }
    fs::write(dir.join("data.jsonl"), data).unwrap();
    fs::write(dir.join("script.json"), r#"[["field:a"], ["field:b"]]"#).unwrap();
    fs::write(
        dir.join("run.toml"),
        "output = \"out\"\n[dataset]\npath = \"data.jsonl\"\nadapter = \"tabular\"\ntask = \"classification\"\n\
         [proposer]\nbackend = \"scripted\"\nscript = \"script.json\"\n\
         [trainer.did3]\niterations = 4\n[trainer.did3.final_forest]\nn_trees = 10\n",
    )
    .unwrap();
}

#[test]
fn train_eval_explain_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);

    let out = leapr(&["train", "--config", "run.toml"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));

    let out = leapr(&["eval", "--run", "out", "--dataset", "data.jsonl", "--tree"], dir);
    assert!(out.status.success());
    assert!(dir.join("out/eval_metrics.json").is_file());

    let out = leapr(&["explain", "--run", "out", "--dataset", "data.jsonl", "--example", "3"], dir);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("base value"));

    let out = leapr(&["explain", "--run", "out", "--dataset", "data.jsonl", "--sample", "40"], dir);
    assert!(out.status.success());
    assert!(dir.join("out/explain/shap_ranking.csv").is_file());

    let out = leapr(&["export-matrix", "--run", "out", "--dataset", "data.jsonl", "--out", "m.csv"], dir);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(dir.join("m.csv")).unwrap().lines().count(), 121);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    assert_eq!(leapr(&["train", "--config", "missing.toml"], dir).status.code(), Some(2));
    assert_eq!(leapr(&["eval", "--run", "nowhere", "--dataset", "data.jsonl"], dir).status.code(), Some(2));
    assert_eq!(leapr(&["frobnicate"], dir).status.code(), Some(2));

    fs::write(
        dir.join("llm.toml"),
        "output = \"llm\"\n[dataset]\npath = \"data.jsonl\"\nadapter = \"tabular\"\ntask = \"classification\"\n\
         [proposer.llm]\napi_base = \"http://127.0.0.1:9\"\nmax_attempts = 1\n",
    )
    .unwrap();
    assert_eq!(leapr(&["train", "--config", "llm.toml"], dir).status.code(), Some(3));
}

#[test]
fn fixtures_listing_is_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = leapr(&["fixtures"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.trim_start().starts_with('['));
    assert!(text.contains("material_difference"));
}
