//! Shared domain types: queries, players, documents, the round/game/dataset
//! record hierarchy, and the declarative competition configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::TransportSpec;
use crate::ranking::{PenaltySpec, RankerSpec};
use crate::text::tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("ranks must be a permutation of 1..n (round {round})")]
    BadRanks { round: u32 },
    #[error("invalid round {round}: {reason}")]
    InvalidRound { round: u32, reason: String },
    #[error("invalid game {query_id}: {reason}")]
    InvalidGame { query_id: String, reason: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// Rule-based agent behaviors used as baselines and test oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedKind {
    Noop,
    Copycat,
    TermInjector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Listwise,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub kind: ContextKind,
    #[serde(default)]
    pub no_copy_clause: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    Scripted { strategy: ScriptedKind },
    Llm { model: String, prompt: PromptVariant },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Player {
    pub id: String,
    #[serde(default)]
    pub persona: String,
    pub agent: AgentKind,
}

/// One player's text in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub player_id: String,
    pub round: u32,
    pub text: String,
    pub token_count: usize,
}

impl Document {
    pub fn new(
        competition_id: &str,
        query_id: &str,
        round: u32,
        player_id: &str,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id(competition_id, query_id, round, player_id),
            player_id: player_id.to_string(),
            round,
            token_count: tokenize(&text).len(),
            text,
        }
    }
}

pub fn doc_id(competition_id: &str, query_id: &str, round: u32, player_id: &str) -> String {
    format!("{competition_id}/{query_id}/{round}/{player_id}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub player_id: String,
    pub rank: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Copy,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Penalty {
    pub player_id: String,
    pub kind: PenaltyKind,
}

/// Outcome of one round. Documents are kept in player-id order and the
/// ranking in rank order. Round 0 holds the initial documents; its ranking
/// may be empty when the source did not rank them.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub documents: Vec<Document>,
    pub ranking: Vec<RankEntry>,
    pub penalties: Vec<Penalty>,
}

impl RoundRecord {
    /// Builds a record, sorting documents by player id and ranking by rank.
    pub fn new(
        round: u32,
        mut documents: Vec<Document>,
        mut ranking: Vec<RankEntry>,
        mut penalties: Vec<Penalty>,
    ) -> Self {
        documents.sort_by(|a, b| a.player_id.cmp(&b.player_id));
        ranking.sort_by_key(|e| e.rank);
        penalties.sort_by(|a, b| a.player_id.cmp(&b.player_id).then(a.kind.cmp(&b.kind)));
        Self {
            round,
            documents,
            ranking,
            penalties,
        }
    }

    pub fn is_ranked(&self) -> bool {
        !self.ranking.is_empty()
    }

    pub fn document(&self, player_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.player_id == player_id)
    }

    pub fn rank_of(&self, player_id: &str) -> Option<u32> {
        self.ranking
            .iter()
            .find(|e| e.player_id == player_id)
            .map(|e| e.rank)
    }

    pub fn entry(&self, player_id: &str) -> Option<&RankEntry> {
        self.ranking.iter().find(|e| e.player_id == player_id)
    }

    pub fn penalty(&self, player_id: &str) -> Option<PenaltyKind> {
        self.penalties
            .iter()
            .find(|p| p.player_id == player_id)
            .map(|p| p.kind)
    }

    /// Document at the given rank (1-based).
    pub fn document_at_rank(&self, rank: u32) -> Option<&Document> {
        let entry = self.ranking.iter().find(|e| e.rank == rank)?;
        self.document(&entry.player_id)
    }

    pub fn winner(&self) -> Option<&Document> {
        self.document_at_rank(1)
    }

    /// Documents ordered from rank 1 downwards.
    pub fn ranked_documents(&self) -> Vec<(&RankEntry, &Document)> {
        self.ranking
            .iter()
            .filter_map(|e| self.document(&e.player_id).map(|d| (e, d)))
            .collect()
    }

    pub fn player_ids(&self) -> BTreeSet<&str> {
        self.documents.iter().map(|d| d.player_id.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidRound {
            round: self.round,
            reason,
        };
        let players = self.player_ids();
        if players.len() != self.documents.len() {
            return Err(invalid("more than one document per player".into()));
        }
        if let Some(d) = self.documents.iter().find(|d| d.round != self.round) {
            return Err(invalid(format!("document {} has round {}", d.doc_id, d.round)));
        }
        if self.ranking.is_empty() {
            if self.round == 0 {
                return Ok(());
            }
            return Err(invalid("missing ranking".into()));
        }
        let mut ranks: Vec<u32> = self.ranking.iter().map(|e| e.rank).collect();
        ranks.sort_unstable();
        if ranks.len() != self.documents.len()
            || ranks.iter().enumerate().any(|(i, &r)| r as usize != i + 1)
        {
            return Err(ModelError::BadRanks { round: self.round });
        }
        let ranked: BTreeSet<&str> = self.ranking.iter().map(|e| e.player_id.as_str()).collect();
        if ranked != players {
            return Err(invalid("ranked players differ from document authors".into()));
        }
        if let Some(p) = self.penalties.iter().find(|p| !players.contains(p.player_id.as_str())) {
            return Err(invalid(format!("penalty for unknown player {}", p.player_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub query: Query,
    /// Round-0 record holding the initial documents.
    pub initial: RoundRecord,
    /// Rounds 1..=R.
    pub rounds: Vec<RoundRecord>,
}

impl GameRecord {
    pub fn initial_documents(&self) -> BTreeMap<&str, &Document> {
        self.initial
            .documents
            .iter()
            .map(|d| (d.player_id.as_str(), d))
            .collect()
    }

    /// Round `r`, where 0 is the initial round.
    pub fn round(&self, r: u32) -> Option<&RoundRecord> {
        if r == 0 {
            Some(&self.initial)
        } else {
            self.rounds.get(r as usize - 1)
        }
    }

    /// Round 0 followed by every played round.
    pub fn all_rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        std::iter::once(&self.initial).chain(self.rounds.iter())
    }

    pub fn completed_rounds(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn player_ids(&self) -> Vec<String> {
        self.initial
            .documents
            .iter()
            .map(|d| d.player_id.clone())
            .collect()
    }

    /// One player's documents from round 0 onwards.
    pub fn history_of(&self, player_id: &str) -> Vec<&Document> {
        self.all_rounds()
            .filter_map(|r| r.document(player_id))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |reason: String| ModelError::InvalidGame {
            query_id: self.query.id.clone(),
            reason,
        };
        if self.query.text.trim().is_empty() {
            return Err(invalid("empty query text".into()));
        }
        if self.initial.round != 0 {
            return Err(invalid("initial round must be round 0".into()));
        }
        self.initial.validate()?;
        let players = self.initial.player_ids();
        for (i, r) in self.rounds.iter().enumerate() {
            if r.round as usize != i + 1 {
                return Err(invalid(format!(
                    "rounds not consecutive: expected {}, found {}",
                    i + 1,
                    r.round
                )));
            }
            r.validate()?;
            if r.player_ids() != players {
                return Err(invalid(format!("round {} has a different player set", r.round)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionDataset {
    pub competition_id: String,
    pub config_digest: String,
    pub games: Vec<GameRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl CompetitionDataset {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut ids = BTreeSet::new();
        for g in &self.games {
            g.validate()?;
            if !ids.insert(g.query.id.as_str()) {
                return Err(ModelError::InvalidDataset(format!(
                    "duplicate query id {}",
                    g.query.id
                )));
            }
        }
        if let Some(first) = self.games.first() {
            let players = first.initial.player_ids();
            for g in &self.games[1..] {
                if g.rounds.len() != first.rounds.len() {
                    return Err(ModelError::InvalidDataset(format!(
                        "game {} has {} rounds, game {} has {}",
                        g.query.id,
                        g.rounds.len(),
                        first.query.id,
                        first.rounds.len()
                    )));
                }
                if g.initial.player_ids() != players {
                    return Err(ModelError::InvalidDataset(format!(
                        "game {} has a different player set",
                        g.query.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rounds(&self) -> u32 {
        self.games.first().map_or(0, GameRecord::completed_rounds)
    }

    pub fn player_ids(&self) -> Vec<String> {
        self.games.first().map_or_else(Vec::new, GameRecord::player_ids)
    }

    /// Number of documents produced in rounds >= 1.
    pub fn generated_documents(&self) -> usize {
        self.games
            .iter()
            .flat_map(|g| g.rounds.iter())
            .map(|r| r.documents.len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: String,
    pub text: String,
    /// player id -> initial document text
    pub initial_documents: BTreeMap<String, String>,
}

impl QuerySpec {
    pub fn query(&self) -> Query {
        Query {
            id: self.id.clone(),
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmParams {
    pub temperature: f64,
    pub top_p: f64,
    /// Defaults to twice the token limit.
    pub max_output_tokens: Option<u32>,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Keep the previous document when every retry fails instead of aborting.
    pub fallback_to_noop: bool,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            top_p: 0.9,
            max_output_tokens: None,
            retries: 3,
            backoff_ms: 500,
            fallback_to_noop: true,
        }
    }
}

fn default_token_limit() -> u32 {
    256
}

fn default_true() -> bool {
    true
}

/// Declarative description of a competition, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionConfig {
    pub competition_id: String,
    pub queries: Vec<QuerySpec>,
    pub players: Vec<Player>,
    pub rounds: u32,
    pub ranker: RankerSpec,
    #[serde(default)]
    pub penalties: PenaltySpec,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_token_limit")]
    pub token_limit: u32,
    #[serde(default)]
    pub llm: LlmParams,
    #[serde(default)]
    pub transport: TransportSpec,
    /// Background corpus for the okapi ranker and copy detection; when
    /// absent the initial documents of all queries are used.
    #[serde(default)]
    pub background_corpus: Option<PathBuf>,
    /// Whether pairwise prompts may sample the agent's own document.
    #[serde(default = "default_true")]
    pub pairwise_include_own: bool,
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
}

impl CompetitionConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `resume_from`.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.resume_from = None;
        let value = serde_json::to_value(&canon).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.llm
            .max_output_tokens
            .unwrap_or(self.token_limit.saturating_mul(2))
    }

    pub fn query(&self, id: &str) -> Option<&QuerySpec> {
        self.queries.iter().find(|q| q.id == id)
    }
}

/// Lists every violated config invariant; empty means valid.
pub fn validate_config(config: &CompetitionConfig) -> Vec<String> {
    let mut v = Vec::new();
    if config.competition_id.trim().is_empty() {
        v.push("competition_id must be non-empty".to_string());
    }
    if config.competition_id.contains('/') {
        v.push("competition_id must not contain '/'".to_string());
    }
    if config.rounds < 1 {
        v.push("rounds must be ≥ 1".to_string());
    }
    if config.token_limit < 1 {
        v.push("token_limit must be ≥ 1".to_string());
    }
    if !(config.llm.temperature >= 0.0) {
        v.push(format!("llm.temperature must be ≥ 0, got {}", config.llm.temperature));
    }
    if !(config.llm.top_p > 0.0 && config.llm.top_p <= 1.0) {
        v.push(format!("llm.top_p must be in (0, 1], got {}", config.llm.top_p));
    }
    if config.players.is_empty() {
        v.push("players must be non-empty".to_string());
    }
    if config.queries.is_empty() {
        v.push("queries must be non-empty".to_string());
    }

    let mut player_ids = BTreeSet::new();
    for p in &config.players {
        if p.id.trim().is_empty() || p.id.contains('/') {
            v.push(format!("players: invalid player id {:?}", p.id));
        }
        if !player_ids.insert(p.id.as_str()) {
            v.push(format!("players: duplicate player id {}", p.id));
        }
        if let AgentKind::Llm { model, .. } = &p.agent {
            if model.trim().is_empty() {
                v.push(format!("players: {} has an empty model name", p.id));
            }
        }
    }

    let mut query_ids = BTreeSet::new();
    for q in &config.queries {
        if q.id.trim().is_empty() || q.id.contains('/') {
            v.push(format!("queries: invalid query id {:?}", q.id));
        }
        if !query_ids.insert(q.id.as_str()) {
            v.push(format!("queries: duplicate query id {}", q.id));
        }
        if q.text.trim().is_empty() {
            v.push(format!("queries: {} has empty text", q.id));
        }
        for p in &player_ids {
            if !q.initial_documents.contains_key(*p) {
                v.push(format!("queries: {} lacks an initial document for player {}", q.id, p));
            }
        }
        for p in q.initial_documents.keys() {
            if !player_ids.contains(p.as_str()) {
                v.push(format!("queries: {} has an initial document for unknown player {}", q.id, p));
            }
        }
    }

    v.extend(config.ranker.violations());
    v.extend(config.penalties.violations());
    v.extend(config.transport.violations());
    v
}


#[cfg(test)]
mod tests {
    use super::fixtures::scripted_config;
    use super::*;

    fn five_players() -> Vec<(&'static str, ScriptedKind)> {
        ["p1", "p2", "p3", "p4", "p5"]
            .into_iter()
            .map(|p| (p, ScriptedKind::Noop))
            .collect()
    }

    #[test]
    fn thirty_round_config_is_valid() {
        let c = scripted_config(30, &five_players(), 30);
        assert_eq!(validate_config(&c), Vec::<String>::new());
    }

    #[test]
    fn zero_rounds_is_reported() {
        let c = scripted_config(1, &five_players(), 0);
        assert_eq!(validate_config(&c), vec!["rounds must be ≥ 1".to_string()]);
    }

    #[test]
    fn missing_initial_document_names_query_and_player() {
        let mut c = scripted_config(2, &five_players(), 3);
        c.queries[0].initial_documents.remove("p3");
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("q1") && v[0].contains("p3"), "{v:?}");
    }

    #[test]
    fn bad_llm_params_are_reported() {
        let mut c = scripted_config(1, &five_players(), 1);
        c.llm.top_p = 0.0;
        c.llm.temperature = -1.0;
        c.token_limit = 0;
        let v = validate_config(&c);
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.contains("top_p")));
        assert!(v.iter().any(|m| m.contains("temperature")));
        assert!(v.iter().any(|m| m.contains("token_limit")));
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let mut c = scripted_config(2, &five_players(), 1);
        c.queries[1].id = "q1".into();
        c.players[1].id = "p1".into();
        let v = validate_config(&c);
        assert!(v.iter().any(|m| m.contains("duplicate query id q1")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("duplicate player id p1")), "{v:?}");
    }

    #[test]
    fn digest_tracks_fields_but_not_resume_path() {
        let c = scripted_config(2, &five_players(), 3);
        let d = c.digest();
        assert_eq!(d, c.clone().digest());
        let mut seeded = c.clone();
        seeded.rng_seed += 1;
        assert_ne!(seeded.digest(), d);
        let mut temp = c.clone();
        temp.llm.temperature = 0.7;
        assert_ne!(temp.digest(), d);
        let mut text = c.clone();
        text.queries[0].initial_documents.insert("p1".into(), "changed".into());
        assert_ne!(text.digest(), d);
        let mut resumed = c.clone();
        resumed.resume_from = Some("ckpt.jsonl".into());
        assert_eq!(resumed.digest(), d);
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{
            "competition_id": "c",
            "queries": [{"id": "q1", "text": "dog food", "initial_documents": {"p1": "x"}}],
            "players": [{"id": "p1", "agent": {"kind": "llm", "model": "m",
                         "prompt": {"kind": "listwise"}}}],
            "rounds": 30,
            "ranker": {"kind": "okapi"}
        }"#;
        let c = CompetitionConfig::from_json(json).unwrap();
        assert_eq!(c.token_limit, 256);
        assert_eq!(c.llm.top_p, 0.9);
        assert_eq!(c.llm.temperature, 0.5);
        assert_eq!(c.max_output_tokens(), 512);
        assert!(validate_config(&c).is_empty());
    }

    fn round(r: u32, players: &[&str], ranks: &[u32]) -> RoundRecord {
        let docs = players
            .iter()
            .map(|p| Document::new("c", "q", r, p, format!("text {p}")))
            .collect();
        let ranking = players
            .iter()
            .zip(ranks)
            .map(|(p, &rank)| RankEntry {
                player_id: p.to_string(),
                rank,
                score: 1.0 / rank as f64,
            })
            .collect();
        RoundRecord::new(r, docs, ranking, vec![])
    }

    #[test]
    fn round_validation() {
        assert!(round(1, &["a", "b", "c"], &[2, 1, 3]).validate().is_ok());
        assert_eq!(
            round(1, &["a", "b"], &[0, 1]).validate(),
            Err(ModelError::BadRanks { round: 1 })
        );
        assert_eq!(
            round(1, &["a", "b"], &[1, 1]).validate(),
            Err(ModelError::BadRanks { round: 1 })
        );
        let unranked = RoundRecord::new(1, round(1, &["a"], &[1]).documents, vec![], vec![]);
        assert!(unranked.validate().is_err());
        let r0 = RoundRecord::new(0, round(0, &["a"], &[1]).documents, vec![], vec![]);
        assert!(r0.validate().is_ok());
    }

    #[test]
    fn game_validation_checks_round_numbers() {
        let g = GameRecord {
            query: Query {
                id: "q".into(),
                text: "dog".into(),
            },
            initial: round(0, &["a", "b"], &[1, 2]),
            rounds: vec![round(1, &["a", "b"], &[1, 2]), round(3, &["a", "b"], &[1, 2])],
        };
        assert!(matches!(g.validate(), Err(ModelError::InvalidGame { .. })));
    }

    #[test]
    fn document_ids_and_counts() {
        let d = Document::new("comp", "q1", 3, "p2", "Hello, big world");
        assert_eq!(d.doc_id, "comp/q1/3/p2");
        assert_eq!(d.token_count, 3);
    }
}
