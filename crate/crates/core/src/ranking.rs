//! Round ranking: pluggable scoring back ends plus copy and stagnation
//! penalties that demote offenders to the bottom of the list.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Embedder, LlmError};
use crate::model::{Document, Penalty, PenaltyKind, Query, RankEntry, RoundRecord};
use crate::text::{self, bm25_score, cosine, dense_cosine, normalize, tfidf_vector, Bm25Params, IdfTable};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("embedding provider failed for {}: {source}", player_id.as_deref().unwrap_or("query"))]
    Provider {
        player_id: Option<String>,
        source: LlmError,
    },
    #[error("embedding ranker needs an embedding provider")]
    NoProvider,
    #[error("no documents to rank")]
    Empty,
    #[error(transparent)]
    Text(#[from] text::TextError),
}

impl RankingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RankingError::Provider { source, .. } if source.is_retryable())
    }
}

fn default_k1() -> f64 {
    1.2
}

fn default_b() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankerSpec {
    Okapi {
        #[serde(default = "default_k1")]
        k1: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    EmbeddingCosine {
        model: String,
    },
}

impl Default for RankerSpec {
    fn default() -> Self {
        RankerSpec::Okapi {
            k1: default_k1(),
            b: default_b(),
        }
    }
}

impl RankerSpec {
    pub fn name(&self) -> String {
        match self {
            RankerSpec::Okapi { k1, b } => format!("okapi(k1={k1},b={b})"),
            RankerSpec::EmbeddingCosine { model } => format!("embedding_cosine({model})"),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        match self {
            RankerSpec::Okapi { k1, b } => {
                let mut v = Vec::new();
                if !(*k1 >= 0.0) {
                    v.push(format!("ranker.k1 must be ≥ 0, got {k1}"));
                }
                if !(0.0..=1.0).contains(b) {
                    v.push(format!("ranker.b must be in [0, 1], got {b}"));
                }
                v
            }
            RankerSpec::EmbeddingCosine { model } if model.trim().is_empty() => {
                vec!["ranker.model must be non-empty".to_string()]
            }
            RankerSpec::EmbeddingCosine { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CopyPenalty {
    pub enabled: bool,
    /// 1.0 means exact (token-normalized) matches only.
    pub similarity_threshold: f64,
}

impl Default for CopyPenalty {
    fn default() -> Self {
        Self {
            enabled: false,
            similarity_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagnationPenalty {
    pub enabled: bool,
    pub max_unchanged_rounds: u32,
}

impl Default for StagnationPenalty {
    fn default() -> Self {
        Self {
            enabled: false,
            max_unchanged_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySpec {
    pub copy: CopyPenalty,
    pub stagnation: StagnationPenalty,
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.copy.similarity_threshold) {
            v.push(format!(
                "penalties.copy.similarity_threshold must be in [0, 1], got {}",
                self.copy.similarity_threshold
            ));
        }
        if self.stagnation.max_unchanged_rounds < 1 {
            v.push("penalties.stagnation.max_unchanged_rounds must be ≥ 1".to_string());
        }
        v
    }
}

/// Shared read-only resources for scoring.
#[derive(Clone, Copy)]
pub struct RankingContext<'a> {
    /// Background-corpus statistics for okapi and copy detection.
    pub idf: &'a IdfTable,
    pub avg_dl: f64,
    pub embedder: Option<&'a dyn Embedder>,
}

pub fn score_documents(
    query: &Query,
    docs: &[Document],
    ranker: &RankerSpec,
    ctx: RankingContext<'_>,
) -> Result<BTreeMap<String, f64>, RankingError> {
    if docs.is_empty() {
        return Err(RankingError::Empty);
    }
    match ranker {
        RankerSpec::Okapi { k1, b } => {
            let q = text::tokenize(&query.text);
            let params = Bm25Params { k1: *k1, b: *b };
            docs.iter()
                .map(|d| {
                    let s = bm25_score(&q, &text::tokenize(&d.text), ctx.idf, params, ctx.avg_dl)?;
                    Ok((d.player_id.clone(), s))
                })
                .collect()
        }
        RankerSpec::EmbeddingCosine { model } => {
            let embedder = ctx.embedder.ok_or(RankingError::NoProvider)?;
            let qv = embedder
                .embed(model, &[query.text.clone()])
                .map_err(|source| RankingError::Provider {
                    player_id: None,
                    source,
                })?
                .pop()
                .ok_or_else(|| RankingError::Provider {
                    player_id: None,
                    source: LlmError::Protocol("empty embedding response".into()),
                })?;
            let scored: Vec<Result<(String, f64), RankingError>> = docs
                .par_iter()
                .map(|d| {
                    let provider = |source| RankingError::Provider {
                        player_id: Some(d.player_id.clone()),
                        source,
                    };
                    let dv = embedder
                        .embed(model, &[d.text.clone()])
                        .map_err(provider)?
                        .pop()
                        .ok_or_else(|| provider(LlmError::Protocol("empty embedding response".into())))?;
                    if dv.len() != qv.len() {
                        return Err(provider(LlmError::Protocol(
                            "embedding dimension mismatch".into(),
                        )));
                    }
                    Ok((d.player_id.clone(), dense_cosine(&qv, &dv)))
                })
                .collect();
            scored.into_iter().collect()
        }
    }
}

/// A document that another player might have copied, with its author's
/// rank in the previous round (`u32::MAX` when unknown).
#[derive(Debug, Clone, Copy)]
pub struct CopyCandidate<'a> {
    pub doc: &'a Document,
    pub rank: u32,
}

/// First candidate (by rank, then player id, then newest round) whose
/// normalized text equals `doc`'s, or whose TF.IDF cosine reaches
/// `threshold` when `threshold < 1`.
pub fn detect_copy(
    doc: &Document,
    pool: &[CopyCandidate<'_>],
    threshold: f64,
    idf: &IdfTable,
) -> Option<String> {
    let mut ordered: Vec<&CopyCandidate<'_>> = pool
        .iter()
        .filter(|c| c.doc.player_id != doc.player_id)
        .collect();
    ordered.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then_with(|| a.doc.player_id.cmp(&b.doc.player_id))
            .then_with(|| b.doc.round.cmp(&a.doc.round))
    });
    let own = normalize(&doc.text);
    let own_vec = (threshold < 1.0).then(|| tfidf_vector::<f64>(&text::tokenize(&doc.text), idf));
    ordered
        .into_iter()
        .find(|c| {
            if normalize(&c.doc.text) == own {
                return true;
            }
            match &own_vec {
                Some(v) => {
                    let other = tfidf_vector::<f64>(&text::tokenize(&c.doc.text), idf);
                    cosine(v, &other) >= threshold
                }
                None => false,
            }
        })
        .map(|c| c.doc.doc_id.clone())
}

/// True iff the last `k + 1` documents share the same normalized text.
pub fn detect_stagnation(history: &[&Document], k: u32) -> bool {
    let needed = k as usize + 1;
    if history.len() < needed {
        return false;
    }
    let tail = &history[history.len() - needed..];
    let first = normalize(&tail[0].text);
    tail[1..].iter().all(|d| normalize(&d.text) == first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub player_id: String,
    pub score: f64,
    pub rank: u32,
    pub penalty: Option<PenaltyKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ranking(&self) -> Vec<RankEntry> {
        self.entries
            .iter()
            .map(|e| RankEntry {
                player_id: e.player_id.clone(),
                rank: e.rank,
                score: e.score,
            })
            .collect()
    }

    pub fn penalties(&self) -> Vec<Penalty> {
        self.entries
            .iter()
            .filter_map(|e| {
                e.penalty.map(|kind| Penalty {
                    player_id: e.player_id.clone(),
                    kind,
                })
            })
            .collect()
    }

    pub fn winner(&self) -> Option<&str> {
        self.entries.first().map(|e| e.player_id.as_str())
    }
}

/// Orders scored players. Ties go to the better previous-round rank, then
/// to the smaller player id; `penalized` players are moved below everyone
/// else keeping their relative order.
pub fn order_players(
    scores: &BTreeMap<String, f64>,
    previous: Option<&RoundRecord>,
    penalized: &BTreeMap<String, PenaltyKind>,
) -> RankedList {
    let prev_rank = |p: &str| previous.and_then(|r| r.rank_of(p)).unwrap_or(u32::MAX);
    let mut order: Vec<(&String, f64)> = scores.iter().map(|(p, &s)| (p, s)).collect();
    order.sort_by(|(pa, sa), (pb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| prev_rank(pa).cmp(&prev_rank(pb)))
            .then_with(|| pa.cmp(pb))
    });
    let (clean, flagged): (Vec<_>, Vec<_>) =
        order.into_iter().partition(|(p, _)| !penalized.contains_key(*p));
    let entries = clean
        .into_iter()
        .chain(flagged)
        .enumerate()
        .map(|(i, (p, score))| RankedEntry {
            player_id: p.clone(),
            score,
            rank: i as u32 + 1,
            penalty: penalized.get(p).copied(),
        })
        .collect();
    RankedList { entries }
}

/// Players penalized in the round formed by `docs`, given earlier rounds
/// (oldest first, round 0 included).
///
/// A player whose text is unchanged from its own previous document is not
/// flagged as a copier (it held that text first), unless that previous
/// document was itself penalized as a copy.
pub fn find_penalties(
    docs: &[Document],
    penalties: &PenaltySpec,
    prior_rounds: &[RoundRecord],
    idf: &IdfTable,
) -> BTreeMap<String, PenaltyKind> {
    let mut flagged = BTreeMap::new();
    let previous = prior_rounds.last();
    for doc in docs {
        if penalties.copy.enabled {
            let own_previous = previous.and_then(|r| r.document(&doc.player_id));
            let unchanged = own_previous.is_some_and(|p| normalize(&p.text) == normalize(&doc.text));
            let copied_before =
                previous.and_then(|r| r.penalty(&doc.player_id)) == Some(PenaltyKind::Copy);
            if !unchanged || copied_before {
                let rank_of = |p: &str| previous.and_then(|r| r.rank_of(p)).unwrap_or(u32::MAX);
                let pool: Vec<CopyCandidate<'_>> = docs
                    .iter()
                    .chain(previous.into_iter().flat_map(|r| r.documents.iter()))
                    .filter(|d| d.player_id != doc.player_id)
                    .map(|d| CopyCandidate {
                        doc: d,
                        rank: rank_of(&d.player_id),
                    })
                    .collect();
                if detect_copy(doc, &pool, penalties.copy.similarity_threshold, idf).is_some() {
                    flagged.insert(doc.player_id.clone(), PenaltyKind::Copy);
                    continue;
                }
            }
        }
        if penalties.stagnation.enabled {
            let mut history: Vec<&Document> = prior_rounds
                .iter()
                .filter_map(|r| r.document(&doc.player_id))
                .collect();
            history.push(doc);
            if detect_stagnation(&history, penalties.stagnation.max_unchanged_rounds) {
                flagged.insert(doc.player_id.clone(), PenaltyKind::Stagnation);
            }
        }
    }
    flagged
}

/// Scores and orders one round. `prior_rounds` are the earlier rounds of
/// the game, oldest first; tie-breaking uses the previous round's ranking
/// only from round 2 on.
pub fn rank_round(
    query: &Query,
    docs: &[Document],
    ranker: &RankerSpec,
    penalties: &PenaltySpec,
    prior_rounds: &[RoundRecord],
    ctx: RankingContext<'_>,
) -> Result<RankedList, RankingError> {
    let scores = score_documents(query, docs, ranker, ctx)?;
    let flagged = find_penalties(docs, penalties, prior_rounds, ctx.idf);
    let previous = prior_rounds.last().filter(|r| r.round >= 1 && r.is_ranked());
    Ok(order_players(&scores, previous, &flagged))
}
