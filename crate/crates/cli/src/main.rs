//! `vqakit`: run pipeline stages, the review service and evaluation.
//!
//! Stage commands print one JSON line per stage run. Failures print
//! `{"code": ..., "message": ...}` to stderr and exit nonzero (2 for usage
//! errors).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vqakit_core::eval::{self, BootstrapSettings, Prediction, Task};
use vqakit_core::pipeline::{self, files, Pipeline, PipelineConfig, StageName, StageOutcome};
use vqakit_core::review::{self, ReviewVerdict, DEFAULT_LEASE_MS};
use vqakit_core::{jsonl, QaPair};
use vqakit_review::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "vqakit", version, about = "Multiple-choice medical VQA dataset pipeline")]
struct Cli {
    /// Run configuration.
    #[arg(long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,
    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fail on hash mismatches and unresolved review candidates instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and a config using it.
    InitFixture {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        records: usize,
    },
    Ingest,
    Generate,
    Parse,
    FilterText,
    TrainClassifier {
        /// Answerability labels (JSON Lines of {pair_id, label}).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    FilterClassifier,
    Split {
        /// Review verdict log.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// JSON Lines of pair ids skipped in review.
        #[arg(long)]
        skipped: Option<PathBuf>,
    },
    Stats,
    Eval(EvalArgs),
    /// Every stage in order.
    RunAll,
    /// Answerability labels from a review verdict log.
    LabelExport {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    ReviewServe(ServeArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: Option<Task>,
    /// Gold pairs. Without it the pipeline's eval stage runs.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Predictions as JSON Lines of {pair_id, text}.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Bootstrap resamples.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    per_sample: bool,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Defaults to the work directory's review candidates.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Defaults to the work directory's corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Verdict log; defaults to reviews.jsonl in the work directory.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Image root; defaults to the directory holding the source corpus.
    #[arg(long)]
    media: Option<PathBuf>,
    /// Built review UI to serve at /.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LEASE_MS)]
    lease_ms: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is::<Usage>() {
                "usage"
            } else {
                e.downcast_ref::<vqakit_core::Error>().map_or("error", |c| c.code())
            };
            report_error(code, &format!("{e:#}"));
            ExitCode::from(if code == "usage" { 2 } else { 1 })
        }
    }
}

/// Bad flag combination caught after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn report_error(code: &str, message: &str) {
    eprintln!("{}", json!({ "code": code, "message": message.trim_end() }));
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.run_seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let stage = match &cli.command {
        Command::InitFixture { dir, records } => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = pipeline::write_fixture_project(dir, *records, cli.seed.unwrap_or(0))?;
            println!("{}", json!({ "config": path }));
            return Ok(());
        }
        Command::LabelExport { log, out } => return label_export(log, out.as_deref()),
        Command::ReviewServe(args) => return review_serve(&cli, args),
        Command::Eval(args) if args.gold.is_some() => return standalone_eval(&cli, args),
        Command::RunAll => None,
        Command::Ingest => Some(StageName::Ingest),
        Command::Generate => Some(StageName::Generate),
        Command::Parse => Some(StageName::Parse),
        Command::FilterText => Some(StageName::FilterText),
        Command::TrainClassifier { .. } => Some(StageName::TrainClassifier),
        Command::FilterClassifier => Some(StageName::FilterClassifier),
        Command::Split { .. } => Some(StageName::Split),
        Command::Stats => Some(StageName::Stats),
        Command::Eval(_) => Some(StageName::Eval),
    };

    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::TrainClassifier { labels: Some(l) } => config.classifier.labels = Some(l.clone()),
        Command::Split { verdicts, skipped } => {
            config.split.verdicts = verdicts.clone().or(config.split.verdicts);
            config.split.skipped = skipped.clone().or(config.split.skipped);
        }
        Command::Eval(args) => {
            if let Some(t) = args.task {
                config.eval.task = t;
            }
            config.eval.predictions = args.pred.clone().or(config.eval.predictions);
            config.eval.resamples = args.bootstrap.unwrap_or(config.eval.resamples);
            config.eval.alpha = args.alpha.unwrap_or(config.eval.alpha);
            config.eval.per_sample |= args.per_sample;
        }
        _ => {}
    }
    config.validate()?;
    let pipeline = Pipeline::new(config).strict(cli.strict);
    let stages: Vec<StageName> = match stage {
        Some(s) => vec![s],
        None => StageName::ALL.to_vec(),
    };
    for s in stages {
        let outcome = pipeline.run_stage(s)?;
        print_outcome(&outcome);
    }
    if let Command::Eval(args) = &cli.command {
        if let Some(out) = &args.out {
            std::fs::copy(pipeline.work_path(files::EVAL_REPORT), out)
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn print_outcome(o: &StageOutcome) {
    let m = &o.manifest;
    println!(
        "{}",
        json!({
            "stage": m.stage,
            "skipped": o.skipped,
            "count_in": m.count_in,
            "count_out": m.count_out,
            "telemetry": m.telemetry,
        })
    );
}

fn standalone_eval(cli: &Cli, args: &EvalArgs) -> anyhow::Result<()> {
    let gold_path = args.gold.as_deref().expect("checked by caller");
    let pred_path = args
        .pred
        .as_deref()
        .ok_or_else(|| Usage("eval --gold needs --pred".into()))?;
    let gold: Vec<QaPair> = jsonl::read(gold_path)?;
    let predictions: Vec<Prediction> = jsonl::read(pred_path)?;
    let defaults = BootstrapSettings::default();
    let settings = BootstrapSettings {
        resamples: args.bootstrap.unwrap_or(defaults.resamples),
        alpha: args.alpha.unwrap_or(defaults.alpha),
        seed: cli.seed.unwrap_or(defaults.seed),
    };
    let report = eval::evaluate(
        args.task.unwrap_or(Task::Choice),
        &gold,
        &predictions,
        &settings,
        args.per_sample,
    )?;
    let text = vqakit_core::canon::to_canonical_json_pretty(&report)?;
    if let Some(out) = &args.out {
        jsonl::write_bytes(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn label_export(log: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let verdicts: Vec<ReviewVerdict> = jsonl::read(log)?;
    let labels = review::export_labels(&verdicts);
    match out {
        Some(path) => {
            jsonl::write(path, &labels)?;
            println!("{}", json!({ "labels": labels.len(), "out": path }));
        }
        None => {
            for l in &labels {
                println!("{}", serde_json::to_string(l)?);
            }
        }
    }
    Ok(())
}

fn review_serve(cli: &Cli, args: &ServeArgs) -> anyhow::Result<()> {
    let config = load_config(cli).ok();
    let from_work = |name: &str| config.as_ref().map(|c| c.work_dir.join(name));
    let missing = |what: &str| Usage(format!("review-serve needs --{what} or a config"));
    let service = ServiceConfig {
        candidates: args
            .candidates
            .clone()
            .or_else(|| from_work(files::REVIEW_CANDIDATES))
            .ok_or_else(|| missing("candidates"))?,
        corpus: args
            .corpus
            .clone()
            .or_else(|| from_work(files::CORPUS).filter(|p| p.is_file())),
        log: args
            .log
            .clone()
            .or_else(|| from_work("reviews.jsonl"))
            .ok_or_else(|| missing("log"))?,
        media_dir: args
            .media
            .clone()
            .or_else(|| {
                config
                    .as_ref()
                    .and_then(|c| c.source.path.parent().map(Path::to_path_buf))
            })
            .ok_or_else(|| missing("media"))?,
        ui_dir: args.ui.clone(),
        lease_ms: args.lease_ms,
    };
    let state = AppState::load(&service, vqakit_review::system_clock())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        vqakit_review::serve(listener, state).await?;
        Ok(())
    })
}
