use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leapr_core::app::{
    cmd_eval, cmd_explain, cmd_export_matrix, cmd_train, AppError, ExplainRequest, ExplainTarget, Explanation,
    Metrics, ModelChoice, ProposerBackend, Run, RunConfig, TrainerChoice,
};
use leapr_core::explain::DEFAULT_SHAP_SAMPLE;
use leapr_core::fixtures::registry_listing_json;

/// Learns programmatic features with F2 or D-ID3 and trains tree models on them.
#[derive(Parser)]
#[command(name = "leapr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trainer and write a run directory.
    Train(TrainArgs),
    /// Score a run's model on a dataset.
    Eval(EvalArgs),
    /// SHAP attributions for one example or a sample.
    Explain(ExplainArgs),
    /// Write feature values of a dataset as CSV.
    ExportMatrix(ExportArgs),
    /// List the native feature registry as JSON.
    Fixtures,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["f2", "did3"])]
    trainer: Option<String>,
    /// Iterations of the selected trainer.
    #[arg(long)]
    iterations: Option<usize>,
    /// Use the scripted proposer with this script.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run directory, or a model file inside one.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Use the D-ID3 tree instead of the final forest.
    #[arg(long)]
    tree: bool,
}

impl RunArgs {
    fn open(&self) -> Result<Run, AppError> {
        Run::open(&self.run, if self.tree { ModelChoice::Tree } else { ModelChoice::Forest })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Metrics JSON path; defaults to eval_metrics.json in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Explain one example by id.
    #[arg(long, conflicts_with = "sample")]
    example: Option<usize>,
    /// Report over a random sample of this many examples.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 3)]
    top: usize,
    /// Class whose probability is explained.
    #[arg(long)]
    class: Option<String>,
    /// Report directory; defaults to explain/ in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

fn train(args: TrainArgs) -> Result<(), AppError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(o) = args.output {
        config.output = o;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    match args.trainer.as_deref() {
        Some("f2") => config.trainer.kind = TrainerChoice::F2,
        Some("did3") => config.trainer.kind = TrainerChoice::Did3,
        _ => {}
    }
    if let Some(n) = args.iterations {
        match config.trainer.kind {
            TrainerChoice::F2 => config.trainer.f2.iterations = n,
            TrainerChoice::Did3 => config.trainer.did3.iterations = n,
        }
    }
    if let Some(s) = args.script {
        config.proposer.backend = ProposerBackend::Scripted;
        config.proposer.script = Some(s);
    }
    let out = config.output.clone();
    let metrics = cmd_train(config, args.resume)?;
    println!("{}", metrics.train.forest);
    println!("run written to {}", out.display());
    Ok(())
}

fn write_json(path: &Path, value: &Metrics) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}

fn eval(args: EvalArgs) -> Result<(), AppError> {
    let run = args.run.open()?;
    let metrics = cmd_eval(&run, &args.run.dataset)?;
    print!("{metrics}");
    write_json(&args.out.unwrap_or_else(|| run.dir.join("eval_metrics.json")), &metrics)
}

fn explain(args: ExplainArgs) -> Result<(), AppError> {
    let run = args.run.open()?;
    let target = match args.example {
        Some(id) => ExplainTarget::Example(id),
        None => ExplainTarget::Sample(args.sample.unwrap_or(DEFAULT_SHAP_SAMPLE)),
    };
    let request = ExplainRequest {
        target,
        top_n: args.top,
        class: args.class,
    };
    match cmd_explain(&run, &args.run.dataset, &request)? {
        Explanation::Single(s) => print!("{s}"),
        Explanation::Report(r) => {
            let dir = args.out.unwrap_or_else(|| run.dir.join("explain"));
            r.write(&dir).map_err(|e| AppError::Runtime(e.to_string()))?;
            println!("sample of {} examples", r.sample_size);
            for f in &r.ranking {
                println!("{:>3}  {:>10.6}  {} [{}]", f.rank, f.mean_abs_shap, f.docstring, f.feature_id);
            }
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), AppError> {
    let run = args.run.open()?;
    let n = cmd_export_matrix(&run, &args.run.dataset, &args.out)?;
    println!("{n} rows written to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
        Command::ExportMatrix(a) => export(a),
        Command::Fixtures => {
            println!("{}", registry_listing_json());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
