//! `rankarena`: simulate ranking competitions, analyze and compare them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rankarena::analyzer::{analyze, write_report, AnalysisResources, AnnotationSet};
use rankarena::compare::{compare_analyses, render_report, CompareError};
use rankarena::dataset::{load_dataset, save_dataset, DatasetError};
use rankarena::engine::{
    merge_shards, read_checkpoint_file, resume, run_competition, EngineError, RunObserver,
    RunOptions, Services,
};
use rankarena::llm::TransportSpec;
use rankarena::model::{validate_config, CompetitionConfig, RoundRecord};
use rankarena::prompts::PromptTemplates;
use rankarena::text::{load_corpus, StopwordList};

const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const RUN_LOG_FILE: &str = "run.log";

#[derive(Parser)]
#[command(name = "rankarena", version, about = "Ranking competitions between document-author agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a competition from a JSON config.
    Simulate(SimulateArgs),
    /// Compute measure series over a dataset.
    Analyze(AnalyzeArgs),
    /// Compare analyses of several competitions.
    Compare(CompareArgs),
    /// Check a config or a dataset without running anything.
    Validate(ValidateArgs),
    /// Merge shard datasets run from the same config.
    Merge(MergeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportChoice {
    Mock,
    Http,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `rng_seed` of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the checkpoint in --out (or the config's resume_from).
    #[arg(long)]
    resume: bool,
    #[arg(long, value_enum)]
    transport: Option<TransportChoice>,
    /// Bounds concurrent games; default is the number of CPUs.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Stop after this round, leaving a checkpoint (exit code 3).
    #[arg(long)]
    stop_after_round: Option<u32>,
    /// Comma-separated query ids to play (a shard).
    #[arg(long, value_delimiter = ',')]
    queries: Option<Vec<String>>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Background corpus for idf statistics (directory of text files or JSONL).
    #[arg(long)]
    idf_corpus: Option<PathBuf>,
    /// Stopword list, one term per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// JSON object mapping competition name to analysis directory.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, required_unless_present = "dataset")]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    shards: Vec<PathBuf>,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    Exit(EXIT_VALIDATION, msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Merge(a) => merge_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<Exit>().map_or(1, |x| x.0);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn read_config(path: &Path) -> Result<CompetitionConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CompetitionConfig::from_json(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<rankarena::model::CompetitionDataset> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_dataset(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io(e) => anyhow::Error::new(e).context(format!("reading {}", path.display())),
        other => validation(format!("{}: {other}", path.display())),
    })
}

fn report_violations(violations: &[String]) -> anyhow::Error {
    for v in violations {
        eprintln!("invalid config: {v}");
    }
    validation(format!("{} config violation(s)", violations.len()))
}

/// Collects run events; lines are written in round order once per round.
#[derive(Default)]
struct RunLog {
    lines: Mutex<Vec<String>>,
}

impl RunObserver for RunLog {
    fn on_round(&self, query_id: &str, round: &RoundRecord) {
        let order: Vec<&str> = round.ranking.iter().map(|e| e.player_id.as_str()).collect();
        let penalties: Vec<String> = round
            .penalties
            .iter()
            .map(|p| format!("{}:{:?}", p.player_id, p.kind))
            .collect();
        let mut line = format!("game {query_id} round {} ranking {}", round.round, order.join(">"));
        if !penalties.is_empty() {
            line.push_str(&format!(" penalties {}", penalties.join(",")));
        }
        self.lines.lock().expect("log lock").push(line);
    }

    fn on_fallback(&self, query_id: &str, round: u32, player_id: &str) {
        self.lines
            .lock()
            .expect("log lock")
            .push(format!("game {query_id} round {round} fallback {player_id}"));
    }
}

fn write_dataset(path: &Path, dataset: &rankarena::model::CompetitionDataset) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    save_dataset(dataset, BufWriter::new(file))?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    match (args.transport, &config.transport) {
        (Some(TransportChoice::Mock), TransportSpec::Http { .. }) => {
            config.transport = TransportSpec::default();
        }
        (Some(TransportChoice::Http), TransportSpec::Mock { .. }) => {
            return Err(report_violations(&[
                "transport: --transport http needs an http transport (endpoint) in the config".into(),
            ]));
        }
        _ => {}
    }
    let violations = validate_config(&config);
    if !violations.is_empty() {
        return Err(report_violations(&violations));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let checkpoint_path = args.out.join(CHECKPOINT_FILE);

    let mut services = Services::from_config(&config)?;
    if let Some(dir) = &args.prompts {
        services.templates = PromptTemplates::load_dir(dir)?;
    }
    let log = Arc::new(RunLog::default());
    let options = RunOptions {
        workers: args.workers,
        stop_after_round: args.stop_after_round,
        queries: args.queries.map(|q| q.into_iter().collect::<BTreeSet<_>>()),
        checkpoint_path: Some(checkpoint_path.clone()),
        observer: Some(log.clone()),
    };
    let outcome = if args.resume {
        let from = config.resume_from.clone().unwrap_or_else(|| checkpoint_path.clone());
        let checkpoint = read_checkpoint_file(&from)
            .with_context(|| format!("reading checkpoint {}", from.display()))?;
        resume(checkpoint, &config, &services, &options)
    } else {
        run_competition(&config, &services, &options)
    };

    let log_lines = std::mem::take(&mut *log.lines.lock().expect("log lock"));
    let log_path = args.out.join(RUN_LOG_FILE);
    let append = |extra: &[String]| -> Result<()> {
        let mut text = if args.resume { fs::read_to_string(&log_path).unwrap_or_default() } else { String::new() };
        for l in log_lines.iter().chain(extra) {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(&log_path, text)?;
        Ok(())
    };

    match outcome {
        Ok(outcome) if outcome.complete => {
            write_dataset(&args.out.join(DATASET_FILE), &outcome.dataset)?;
            append(&[format!(
                "complete: {} games, {} rounds, {} generated documents, {} fallbacks",
                outcome.dataset.games.len(),
                outcome.completed_rounds,
                outcome.dataset.generated_documents(),
                outcome.fallbacks
            )])?;
            println!("{}", args.out.join(DATASET_FILE).display());
            Ok(())
        }
        Ok(outcome) => {
            append(&[format!("stopped after round {}", outcome.completed_rounds)])?;
            Err(Exit(
                EXIT_PARTIAL,
                format!(
                    "stopped after round {} of {}; resume with --resume (checkpoint {})",
                    outcome.completed_rounds,
                    config.rounds,
                    checkpoint_path.display()
                ),
            )
            .into())
        }
        Err(EngineError::InvalidConfig(v)) => Err(report_violations(&v)),
        Err(e @ EngineError::DigestMismatch { .. }) => Err(validation(e.to_string())),
        Err(e @ EngineError::Aborted { .. }) => {
            append(&[format!("aborted: {e}")])?;
            Err(Exit(EXIT_PARTIAL, format!("{e}; checkpoint {}", checkpoint_path.display())).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let dataset = read_dataset(&args.dataset)?;
    let stopwords = match &args.stopwords {
        Some(p) => StopwordList::load(p)?,
        None => StopwordList::english(),
    };
    let resources = match &args.idf_corpus {
        Some(p) => {
            let corpus = load_corpus(p)?;
            AnalysisResources::<f64>::from_corpus(&corpus, &dataset, stopwords)?
        }
        None => AnalysisResources::<f64>::from_dataset(&dataset, stopwords)?,
    };
    let annotations = args.annotations.as_deref().map(AnnotationSet::load).transpose()?;
    let report = analyze(&dataset, &resources, annotations.as_ref())?;
    for s in &report.skipped {
        log::warn!("skipped {s}");
    }
    write_report(&report, &args.out)?;
    println!("{}", args.out.join(rankarena::analyzer::MANIFEST_FILE).display());
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let listed: BTreeMap<String, PathBuf> = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", args.manifest.display())))?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let inputs: BTreeMap<String, PathBuf> = listed
        .into_iter()
        .map(|(k, v)| (k, if v.is_relative() { base.join(v) } else { v }))
        .collect();
    let (tables, warnings) = match compare_analyses::<f64>(&inputs) {
        Err(CompareError::TooFewCompetitions(n)) => {
            return Err(validation(format!("compare needs ≥2 competitions, manifest lists {n}")))
        }
        other => other?,
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if tables.is_empty() {
        return Err(validation("no measure is shared by all competitions"));
    }
    render_report(&tables, &args.out)?;
    println!("{}", args.out.join("index.html").display());
    Ok(())
}

fn validate_cmd(args: ValidateArgs) -> Result<()> {
    if let Some(path) = &args.config {
        let config = read_config(path)?;
        let violations = validate_config(&config);
        if !violations.is_empty() {
            return Err(report_violations(&violations));
        }
        println!("config ok: digest {}", config.digest());
    }
    if let Some(path) = &args.dataset {
        let d = read_dataset(path)?;
        println!(
            "dataset ok: {} games, {} rounds, {} generated documents",
            d.games.len(),
            d.rounds(),
            d.generated_documents()
        );
    }
    Ok(())
}

fn merge_cmd(args: MergeArgs) -> Result<()> {
    let config = read_config(&args.config)?;
    let shards = args.shards.iter().map(|p| read_dataset(p)).collect::<Result<Vec<_>>>()?;
    let merged = match merge_shards(&config, shards) {
        Err(e @ EngineError::Shards(_)) => bail!(Exit(EXIT_VALIDATION, e.to_string())),
        other => other?,
    };
    write_dataset(&args.out, &merged)
}
