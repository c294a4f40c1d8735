//! Competition orchestration: the per-round loop, seeding, checkpoints and
//! resume, and shard merging.
//!
//! Rounds advance in lock-step across games: every game plays round `r`
//! before any plays `r + 1`, so a checkpoint is always "all games complete
//! through round `r`".

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{llm_agent_step, scripted_agent_step, AgentError, GameView, LlmAgent};
use crate::dataset::{load_checkpoint, save_checkpoint, Checkpoint, DatasetError};
use crate::llm::{ChatBackend, Embedder, LlmError, Transport};
use crate::model::{
    validate_config, AgentKind, CompetitionConfig, CompetitionDataset, Document, GameRecord,
    QuerySpec, RoundRecord,
};
use crate::prompts::{PromptBundle, PromptSettings, PromptTemplates, TEMPLATE_VERSION};
use crate::ranking::{rank_round, PenaltySpec, RankerSpec, RankingContext, RankingError};
use crate::text::{build_idf_table, load_corpus, tokenize, IdfTable, TextError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("checkpoint was written for config {found}, current config is {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("run aborted in round {round} of game {query_id}: {message}")]
    Aborted {
        round: u32,
        query_id: String,
        message: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error("shards cannot be merged: {0}")]
    Shards(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Shared read-only resources of a run.
pub struct Services {
    pub chat: Arc<dyn ChatBackend>,
    pub embedder: Option<Arc<dyn Embedder>>,
    /// Background statistics for okapi scoring and copy detection.
    pub idf: IdfTable,
    pub avg_dl: f64,
    pub templates: PromptTemplates,
}

impl Services {
    /// Transport from the config; IDF from `background_corpus`, or from the
    /// initial documents of every query when none is configured.
    pub fn from_config(config: &CompetitionConfig) -> Result<Self, EngineError> {
        let transport = Arc::new(Transport::from_spec(&config.transport)?);
        let idf = match &config.background_corpus {
            Some(path) => build_idf_table(load_corpus(path)?.iter().map(|t| tokenize(t)))?,
            None => initial_document_idf(config)?,
        };
        Ok(Self {
            chat: transport.clone(),
            embedder: Some(transport),
            avg_dl: idf.avg_doc_len().max(f64::MIN_POSITIVE),
            idf,
            templates: PromptTemplates::default(),
        })
    }

    pub fn with_backends(
        chat: Arc<dyn ChatBackend>,
        embedder: Option<Arc<dyn Embedder>>,
        idf: IdfTable,
    ) -> Self {
        Self {
            chat,
            embedder,
            avg_dl: idf.avg_doc_len().max(f64::MIN_POSITIVE),
            idf,
            templates: PromptTemplates::default(),
        }
    }

    fn ranking_context(&self) -> RankingContext<'_> {
        RankingContext {
            idf: &self.idf,
            avg_dl: self.avg_dl,
            embedder: self.embedder.as_deref(),
        }
    }
}

pub fn initial_document_idf(config: &CompetitionConfig) -> Result<IdfTable, TextError> {
    build_idf_table(
        config
            .queries
            .iter()
            .flat_map(|q| q.initial_documents.values())
            .map(|t| tokenize(t)),
    )
}

/// Receives run events. Round events arrive in game order after each
/// round barrier; prompt events may arrive from worker threads.
pub trait RunObserver: Send + Sync {
    fn on_prompt(&self, _query_id: &str, _round: u32, _player_id: &str, _prompt: &PromptBundle) {}
    fn on_round(&self, _query_id: &str, _round: &RoundRecord) {}
    fn on_fallback(&self, _query_id: &str, _round: u32, _player_id: &str) {}
}

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    /// Stop after this many rounds, leaving a resumable partial run.
    pub stop_after_round: Option<u32>,
    /// Only play these queries (a shard); `None` plays all.
    pub queries: Option<BTreeSet<String>>,
    /// Rewritten after every completed round.
    pub checkpoint_path: Option<PathBuf>,
    pub observer: Option<Arc<dyn RunObserver>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dataset: CompetitionDataset,
    pub completed_rounds: u32,
    pub complete: bool,
    pub fallbacks: usize,
}

impl RunOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        checkpoint_of(&self.dataset, self.completed_rounds)
    }
}

fn checkpoint_of(dataset: &CompetitionDataset, completed_rounds: u32) -> Checkpoint {
    let rng_state = dataset
        .metadata
        .get("rng_seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or_default();
    Checkpoint {
        config_digest: dataset.config_digest.clone(),
        completed_rounds,
        rng_state,
        dataset: dataset.clone(),
    }
}

/// Seed of the rng stream for one (game, round, player).
pub fn stream_seed(master: u64, query_id: &str, round: u32, player_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}\u{1f}{query_id}\u{1f}{round}\u{1f}{player_id}"));
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

fn metadata(config: &CompetitionConfig) -> BTreeMap<String, String> {
    let models: BTreeSet<&str> = config
        .players
        .iter()
        .filter_map(|p| match &p.agent {
            AgentKind::Llm { model, .. } => Some(model.as_str()),
            AgentKind::Scripted { .. } => None,
        })
        .collect();
    BTreeMap::from([
        ("rng_seed".to_string(), config.rng_seed.to_string()),
        ("ranker".to_string(), config.ranker.name()),
        ("models".to_string(), models.into_iter().collect::<Vec<_>>().join(",")),
        ("rounds".to_string(), config.rounds.to_string()),
        ("players".to_string(), config.players.len().to_string()),
        ("token_limit".to_string(), config.token_limit.to_string()),
        ("prompt_templates".to_string(), TEMPLATE_VERSION.to_string()),
    ])
}

fn selected_queries<'a>(config: &'a CompetitionConfig, options: &RunOptions) -> Vec<&'a QuerySpec> {
    config
        .queries
        .iter()
        .filter(|q| options.queries.as_ref().map_or(true, |s| s.contains(&q.id)))
        .collect()
}

/// Round 0: the initial documents and their ranking.
pub fn initial_round(
    config: &CompetitionConfig,
    spec: &QuerySpec,
    services: &Services,
) -> Result<RoundRecord, RankingError> {
    let docs: Vec<Document> = config
        .players
        .iter()
        .map(|p| Document::new(&config.competition_id, &spec.id, 0, &p.id, &spec.initial_documents[&p.id]))
        .collect();
    let ranked = rank_round(
        &spec.query(),
        &docs,
        &config.ranker,
        &PenaltySpec::none(),
        &[],
        services.ranking_context(),
    )?;
    Ok(RoundRecord::new(0, docs, ranked.ranking(), ranked.penalties()))
}

struct RoundResult {
    record: RoundRecord,
    fallbacks: Vec<String>,
}

fn with_retries<T>(
    retries: u32,
    mut f: impl FnMut() -> Result<T, RankingError>,
) -> Result<T, RankingError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < retries => attempt += 1,
            other => return other,
        }
    }
}

/// Plays round `round` of one game: every agent writes from the same
/// snapshot of rounds `< round`, then the new documents are ranked.
fn play_round(
    config: &CompetitionConfig,
    game: &GameRecord,
    round: u32,
    services: &Services,
    observer: Option<&dyn RunObserver>,
) -> Result<RoundResult, EngineError> {
    let history: Arc<[RoundRecord]> = game.all_rounds().cloned().collect();
    let latest = history.last().expect("round 0 always present");
    let max_output_tokens = config.max_output_tokens();

    let outputs: Vec<Result<(Document, bool), EngineError>> = config
        .players
        .par_iter()
        .map(|player| {
            let own = latest
                .document(&player.id)
                .expect("every round holds every player")
                .clone();
            let view = GameView {
                query: game.query.clone(),
                player_id: player.id.clone(),
                own_current_doc: own,
                history: history.clone(),
                round_number: round,
                rng_seed: stream_seed(config.rng_seed, &game.query.id, round, &player.id),
            };
            let (text, fallback) = match &player.agent {
                AgentKind::Scripted { strategy } => {
                    (scripted_agent_step(*strategy, &view, Some(&services.idf)), false)
                }
                AgentKind::Llm { model, prompt } => {
                    let agent = LlmAgent {
                        model,
                        prompt: PromptSettings {
                            player,
                            variant: *prompt,
                            token_limit: config.token_limit,
                            pairwise_include_own: config.pairwise_include_own,
                        },
                        params: &config.llm,
                        max_output_tokens,
                        templates: &services.templates,
                    };
                    let out = llm_agent_step(&view, agent, services.chat.as_ref())?;
                    if let (Some(obs), Some(p)) = (observer, &out.prompt) {
                        obs.on_prompt(&game.query.id, round, &player.id, p);
                    }
                    (out.text, out.fallback)
                }
            };
            let doc = Document::new(&config.competition_id, &game.query.id, round, &player.id, text);
            Ok((doc, fallback))
        })
        .collect();

    let mut docs = Vec::with_capacity(outputs.len());
    let mut fallbacks = Vec::new();
    for out in outputs {
        let (doc, fallback) = out?;
        if fallback {
            fallbacks.push(doc.player_id.clone());
        }
        docs.push(doc);
    }
    let ranked = with_retries(config.llm.retries, || {
        rank_round(
            &game.query,
            &docs,
            &config.ranker,
            &config.penalties,
            &history,
            services.ranking_context(),
        )
    })?;
    Ok(RoundResult {
        record: RoundRecord::new(round, docs, ranked.ranking(), ranked.penalties()),
        fallbacks,
    })
}

fn write_checkpoint_file(path: &Path, cp: &Checkpoint) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp)?;
        save_checkpoint(cp, BufWriter::new(file))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint, EngineError> {
    let file = fs::File::open(path)?;
    Ok(load_checkpoint(BufReader::new(file))?)
}

fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool builds")
}

fn drive(
    config: &CompetitionConfig,
    services: &Services,
    options: &RunOptions,
    mut dataset: CompetitionDataset,
    mut completed: u32,
) -> Result<RunOutcome, EngineError> {
    let last = options
        .stop_after_round
        .map_or(config.rounds, |s| s.min(config.rounds));
    let observer = options.observer.as_deref();
    let mut fallbacks = 0usize;
    let pool = build_pool(options.workers);
    while completed < last {
        let round = completed + 1;
        let results: Vec<Result<RoundResult, EngineError>> = pool.install(|| {
            dataset
                .games
                .par_iter()
                .map(|g| play_round(config, g, round, services, observer))
                .collect()
        });
        let mut records = Vec::with_capacity(results.len());
        for (game, result) in dataset.games.iter().zip(results) {
            match result {
                Ok(r) => records.push(r),
                Err(e) => {
                    let checkpoint = Box::new(checkpoint_of(&dataset, completed));
                    if let Some(path) = &options.checkpoint_path {
                        write_checkpoint_file(path, &checkpoint)?;
                    }
                    return Err(EngineError::Aborted {
                        round,
                        query_id: game.query.id.clone(),
                        message: e.to_string(),
                        checkpoint,
                    });
                }
            }
        }
        for (game, result) in dataset.games.iter_mut().zip(records) {
            if let Some(obs) = observer {
                for p in &result.fallbacks {
                    obs.on_fallback(&game.query.id, round, p);
                }
                obs.on_round(&game.query.id, &result.record);
            }
            log::info!(
                "game {} round {}: winner {}",
                game.query.id,
                round,
                result.record.ranking.first().map_or("-", |e| e.player_id.as_str())
            );
            fallbacks += result.fallbacks.len();
            game.rounds.push(result.record);
        }
        completed = round;
        if let Some(path) = &options.checkpoint_path {
            write_checkpoint_file(path, &checkpoint_of(&dataset, completed))?;
        }
    }
    Ok(RunOutcome {
        complete: completed == config.rounds,
        dataset,
        completed_rounds: completed,
        fallbacks,
    })
}

fn check_config(config: &CompetitionConfig) -> Result<(), EngineError> {
    let violations = validate_config(config);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(EngineError::InvalidConfig(violations))
    }
}

/// Plays one game from its initial documents through every round.
pub fn run_game(
    config: &CompetitionConfig,
    query: &QuerySpec,
    services: &Services,
) -> Result<GameRecord, EngineError> {
    check_config(config)?;
    let mut game = GameRecord {
        query: query.query(),
        initial: initial_round(config, query, services)?,
        rounds: Vec::new(),
    };
    for round in 1..=config.rounds {
        let result = play_round(config, &game, round, services, None)?;
        game.rounds.push(result.record);
    }
    Ok(game)
}

/// Runs every selected game of the competition with the shared player set.
pub fn run_competition(
    config: &CompetitionConfig,
    services: &Services,
    options: &RunOptions,
) -> Result<RunOutcome, EngineError> {
    check_config(config)?;
    let pool = build_pool(options.workers);
    let specs = selected_queries(config, options);
    let initial: Vec<Result<RoundRecord, RankingError>> = pool.install(|| {
        specs
            .par_iter()
            .map(|q| initial_round(config, q, services))
            .collect()
    });
    let games = specs
        .iter()
        .zip(initial)
        .map(|(q, r)| {
            Ok(GameRecord {
                query: q.query(),
                initial: r?,
                rounds: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    let dataset = CompetitionDataset {
        competition_id: config.competition_id.clone(),
        config_digest: config.digest(),
        games,
        metadata: metadata(config),
    };
    if let Some(obs) = &options.observer {
        for g in &dataset.games {
            obs.on_round(&g.query.id, &g.initial);
        }
    }
    drive(config, services, options, dataset, 0)
}

/// Continues a run from a checkpoint written under the same config.
pub fn resume(
    checkpoint: Checkpoint,
    config: &CompetitionConfig,
    services: &Services,
    options: &RunOptions,
) -> Result<RunOutcome, EngineError> {
    check_config(config)?;
    let expected = config.digest();
    if checkpoint.config_digest != expected {
        return Err(EngineError::DigestMismatch {
            expected,
            found: checkpoint.config_digest,
        });
    }
    let completed = checkpoint.completed_rounds;
    if completed >= config.rounds {
        return Ok(RunOutcome {
            dataset: checkpoint.dataset,
            completed_rounds: completed,
            complete: true,
            fallbacks: 0,
        });
    }
    drive(config, services, options, checkpoint.dataset, completed)
}

/// Combines shard datasets run from the same config over disjoint query
/// subsets, ordering games as in the config.
pub fn merge_shards(
    config: &CompetitionConfig,
    shards: Vec<CompetitionDataset>,
) -> Result<CompetitionDataset, EngineError> {
    let digest = config.digest();
    let mut by_query: BTreeMap<String, GameRecord> = BTreeMap::new();
    let mut metadata = None;
    for shard in shards {
        if shard.config_digest != digest {
            return Err(EngineError::Shards(format!(
                "shard digest {} does not match config {digest}",
                shard.config_digest
            )));
        }
        metadata.get_or_insert(shard.metadata);
        for game in shard.games {
            let id = game.query.id.clone();
            if by_query.insert(id.clone(), game).is_some() {
                return Err(EngineError::Shards(format!("query {id} appears in more than one shard")));
            }
        }
    }
    let games = config
        .queries
        .iter()
        .filter_map(|q| by_query.remove(&q.id))
        .collect();
    if let Some(extra) = by_query.keys().next() {
        return Err(EngineError::Shards(format!("query {extra} is not in the config")));
    }
    let dataset = CompetitionDataset {
        competition_id: config.competition_id.clone(),
        config_digest: digest,
        games,
        metadata: metadata.unwrap_or_else(|| crate::engine::metadata(config)),
    };
    dataset.validate().map_err(DatasetError::from)?;
    Ok(dataset)
}

/// Name of the ranker as recorded in dataset metadata.
pub fn ranker_name(spec: &RankerSpec) -> String {
    spec.name()
}
