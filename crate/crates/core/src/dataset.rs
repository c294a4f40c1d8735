//! JSON Lines persistence for datasets and checkpoints.
//!
//! A dataset file starts with a `{"type":"dataset",...}` header followed by
//! one record per (game, round, player). A checkpoint file prepends a
//! `{"type":"checkpoint",...}` record to the same content. Keys are sorted
//! and lines end in `\n`, so equal datasets serialize to identical bytes.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    CompetitionDataset, Document, GameRecord, ModelError, Penalty, PenaltyKind, Query, RankEntry,
    RoundRecord,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
    format_version: u32,
    competition_id: String,
    config_digest: String,
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    #[serde(rename = "type")]
    kind: String,
    format_version: u32,
    config_digest: String,
    completed_rounds: u32,
    rng_state: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    competition_id: String,
    query_id: String,
    query_text: String,
    round: u32,
    player_id: String,
    doc_id: String,
    text: String,
    rank: Option<u32>,
    score: Option<f64>,
    penalty: Option<PenaltyKind>,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, record: &T) -> io::Result<()> {
    // Going through Value sorts the keys.
    let value = serde_json::to_value(record).map_err(io::Error::other)?;
    serde_json::to_writer(&mut *w, &value).map_err(io::Error::other)?;
    w.write_all(b"\n")
}

fn write_records<W: Write>(d: &CompetitionDataset, w: &mut W) -> io::Result<()> {
    write_line(
        w,
        &Header {
            kind: "dataset".into(),
            format_version: FORMAT_VERSION,
            competition_id: d.competition_id.clone(),
            config_digest: d.config_digest.clone(),
            metadata: d.metadata.clone(),
        },
    )?;
    for game in &d.games {
        for round in game.all_rounds() {
            for doc in &round.documents {
                let entry = round.entry(&doc.player_id);
                write_line(
                    w,
                    &DocRecord {
                        competition_id: d.competition_id.clone(),
                        query_id: game.query.id.clone(),
                        query_text: game.query.text.clone(),
                        round: round.round,
                        player_id: doc.player_id.clone(),
                        doc_id: doc.doc_id.clone(),
                        text: doc.text.clone(),
                        rank: entry.map(|e| e.rank),
                        score: entry.map(|e| e.score),
                        penalty: round.penalty(&doc.player_id),
                    },
                )?;
            }
        }
    }
    Ok(())
}

pub fn save_dataset<W: Write>(dataset: &CompetitionDataset, mut sink: W) -> Result<(), DatasetError> {
    dataset.validate()?;
    write_records(dataset, &mut sink)?;
    sink.flush()?;
    Ok(())
}

pub fn dataset_to_bytes(dataset: &CompetitionDataset) -> Result<Vec<u8>, DatasetError> {
    let mut buf = Vec::new();
    save_dataset(dataset, &mut buf)?;
    Ok(buf)
}

pub fn load_dataset<R: BufRead>(source: R) -> Result<CompetitionDataset, DatasetError> {
    let mut lines = numbered_lines(source);
    let (line, first) = lines
        .next()
        .transpose()?
        .ok_or(DatasetError::Schema {
            line: 1,
            message: "empty input".into(),
        })?;
    parse_dataset(line, first, lines)
}

/// A resumable snapshot: all games up to `completed_rounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub completed_rounds: u32,
    pub rng_state: u64,
    pub dataset: CompetitionDataset,
}

pub fn save_checkpoint<W: Write>(cp: &Checkpoint, mut sink: W) -> Result<(), DatasetError> {
    write_line(
        &mut sink,
        &CheckpointHeader {
            kind: "checkpoint".into(),
            format_version: FORMAT_VERSION,
            config_digest: cp.config_digest.clone(),
            completed_rounds: cp.completed_rounds,
            rng_state: cp.rng_state,
        },
    )?;
    save_dataset(&cp.dataset, &mut sink)
}

pub fn load_checkpoint<R: BufRead>(source: R) -> Result<Checkpoint, DatasetError> {
    let mut lines = numbered_lines(source);
    let (line, first) = lines.next().transpose()?.ok_or(DatasetError::Schema {
        line: 1,
        message: "empty input".into(),
    })?;
    let value = parse_json(line, &first)?;
    check_version(&value)?;
    if value.get("type").and_then(Value::as_str) != Some("checkpoint") {
        return Err(schema(line, "expected a checkpoint header record"));
    }
    let header: CheckpointHeader =
        serde_json::from_value(value).map_err(|e| schema(line, e))?;
    let (line, next) = lines.next().transpose()?.ok_or(DatasetError::Schema {
        line: line + 1,
        message: "checkpoint lacks a dataset header".into(),
    })?;
    let dataset = parse_dataset(line, next, lines)?;
    if dataset.config_digest != header.config_digest {
        return Err(schema(line, "checkpoint and dataset digests differ"));
    }
    if dataset.games.iter().any(|g| g.completed_rounds() != header.completed_rounds) {
        return Err(schema(line, "game round counts disagree with completed_rounds"));
    }
    Ok(Checkpoint {
        config_digest: header.config_digest,
        completed_rounds: header.completed_rounds,
        rng_state: header.rng_state,
        dataset,
    })
}

fn schema(line: usize, message: impl ToString) -> DatasetError {
    DatasetError::Schema {
        line,
        message: message.to_string(),
    }
}

fn numbered_lines<R: BufRead>(source: R) -> impl Iterator<Item = io::Result<(usize, String)>> {
    source
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_json(line: usize, text: &str) -> Result<Value, DatasetError> {
    serde_json::from_str(text).map_err(|e| schema(line, e))
}

fn check_version(value: &Value) -> Result<(), DatasetError> {
    match value.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(DatasetError::Version { found: v }),
        None => Ok(()),
    }
}

struct PendingRound {
    line: usize,
    docs: Vec<Document>,
    ranking: Vec<RankEntry>,
    penalties: Vec<Penalty>,
    unranked: usize,
}

struct PendingGame {
    line: usize,
    query: Query,
    rounds: BTreeMap<u32, PendingRound>,
}

fn parse_dataset<I>(line: usize, header_text: String, rest: I) -> Result<CompetitionDataset, DatasetError>
where
    I: Iterator<Item = io::Result<(usize, String)>>,
{
    let value = parse_json(line, &header_text)?;
    check_version(&value)?;
    if value.get("type").and_then(Value::as_str) != Some("dataset") {
        return Err(schema(line, "expected a dataset header record"));
    }
    let header: Header = serde_json::from_value(value).map_err(|e| schema(line, e))?;

    let mut games: Vec<PendingGame> = Vec::new();
    for item in rest {
        let (line, text) = item?;
        let value = parse_json(line, &text)?;
        if value.get("type").is_some() {
            return Err(schema(line, "unexpected header record inside dataset"));
        }
        let rec: DocRecord = serde_json::from_value(value).map_err(|e| schema(line, e))?;
        if rec.competition_id != header.competition_id {
            return Err(schema(line, format!("competition_id {} differs from header", rec.competition_id)));
        }
        if rec.rank == Some(0) || (rec.rank.is_some() != rec.score.is_some()) {
            return Err(schema(line, "ranks must be a permutation of 1..n"));
        }
        let game = match games.iter_mut().position(|g| g.query.id == rec.query_id) {
            Some(i) => &mut games[i],
            None => {
                games.push(PendingGame {
                    line,
                    query: Query {
                        id: rec.query_id.clone(),
                        text: rec.query_text.clone(),
                    },
                    rounds: BTreeMap::new(),
                });
                games.last_mut().expect("just pushed")
            }
        };
        if game.query.text != rec.query_text {
            return Err(schema(line, format!("query text for {} differs between records", rec.query_id)));
        }
        let expected_id = crate::model::doc_id(&rec.competition_id, &rec.query_id, rec.round, &rec.player_id);
        if rec.doc_id != expected_id {
            return Err(schema(line, format!("doc_id {} should be {expected_id}", rec.doc_id)));
        }
        let round = game.rounds.entry(rec.round).or_insert_with(|| PendingRound {
            line,
            docs: Vec::new(),
            ranking: Vec::new(),
            penalties: Vec::new(),
            unranked: 0,
        });
        match (rec.rank, rec.score) {
            (Some(rank), Some(score)) => round.ranking.push(RankEntry {
                player_id: rec.player_id.clone(),
                rank,
                score,
            }),
            _ => round.unranked += 1,
        }
        if let Some(kind) = rec.penalty {
            round.penalties.push(Penalty {
                player_id: rec.player_id.clone(),
                kind,
            });
        }
        round.docs.push(Document {
            doc_id: rec.doc_id,
            player_id: rec.player_id,
            round: rec.round,
            token_count: crate::text::tokenize(&rec.text).len(),
            text: rec.text,
        });
    }

    let mut out = Vec::with_capacity(games.len());
    for g in games {
        let mut rounds = Vec::new();
        for (r, p) in g.rounds {
            if p.unranked > 0 && !p.ranking.is_empty() {
                return Err(schema(p.line, format!("round {r} mixes ranked and unranked records")));
            }
            let record = RoundRecord::new(r, p.docs, p.ranking, p.penalties);
            record
                .validate()
                .map_err(|source| DatasetError::Invalid { line: p.line, source })?;
            rounds.push(record);
        }
        let mut iter = rounds.into_iter();
        let initial = match iter.next() {
            Some(r) if r.round == 0 => r,
            _ => return Err(schema(g.line, format!("game {} lacks round 0", g.query.id))),
        };
        let game = GameRecord {
            query: g.query,
            initial,
            rounds: iter.collect(),
        };
        game.validate()
            .map_err(|source| DatasetError::Invalid { line: g.line, source })?;
        out.push(game);
    }

    let dataset = CompetitionDataset {
        competition_id: header.competition_id,
        config_digest: header.config_digest,
        games: out,
        metadata: header.metadata,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CompetitionDataset {
        let mk = |r: u32, ranked: bool| {
            let docs = vec![
                Document::new("c", "q1", r, "a", format!("alpha {r}")),
                Document::new("c", "q1", r, "b", "beta"),
            ];
            let ranking = if ranked {
                vec![
                    RankEntry { player_id: "b".into(), rank: 1, score: 0.5 },
                    RankEntry { player_id: "a".into(), rank: 2, score: 0.25 },
                ]
            } else {
                vec![]
            };
            RoundRecord::new(r, docs, ranking, vec![])
        };
        CompetitionDataset {
            competition_id: "c".into(),
            config_digest: "abc".into(),
            games: vec![GameRecord {
                query: Query { id: "q1".into(), text: "dog food".into() },
                initial: mk(0, false),
                rounds: vec![mk(1, true), mk(2, true)],
            }],
            metadata: BTreeMap::from([("seed".to_string(), "1".to_string())]),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = CompetitionDataset {
            competition_id: "c".into(),
            config_digest: "x".into(),
            games: vec![],
            metadata: BTreeMap::new(),
        };
        let bytes = dataset_to_bytes(&d).unwrap();
        assert_eq!(load_dataset(&bytes[..]).unwrap(), d);
    }

    #[test]
    fn round_trip_and_canonical_bytes() {
        let d = tiny();
        let bytes = dataset_to_bytes(&d).unwrap();
        let back = load_dataset(&bytes[..]).unwrap();
        assert_eq!(back, d);
        assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let first_doc = text.lines().nth(1).unwrap();
        assert!(first_doc.starts_with("{\"competition_id\":\"c\",\"doc_id\":\"c/q1/0/a\""));
        assert!(first_doc.contains("\"rank\":null"));
    }

    #[test]
    fn rank_zero_is_rejected() {
        let text = String::from_utf8(dataset_to_bytes(&tiny()).unwrap()).unwrap();
        let tampered = text.replacen("\"rank\":1", "\"rank\":0", 1);
        let err = load_dataset(tampered.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("ranks must be a permutation of 1..n"), "{err}");
    }

    #[test]
    fn duplicate_rank_is_rejected_with_line() {
        let text = String::from_utf8(dataset_to_bytes(&tiny()).unwrap()).unwrap();
        let tampered = text.replacen("\"rank\":2", "\"rank\":1", 1);
        let err = load_dataset(tampered.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { .. }), "{err}");
        assert!(err.to_string().contains("ranks must be a permutation of 1..n"));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = String::from_utf8(dataset_to_bytes(&tiny()).unwrap()).unwrap();
        let tampered = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(matches!(
            load_dataset(tampered.as_bytes()),
            Err(DatasetError::Version { found: 9 })
        ));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = String::from_utf8(dataset_to_bytes(&tiny()).unwrap()).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{not json";
        let err = load_dataset(lines.join("\n").as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 4:"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let cp = Checkpoint {
            config_digest: "abc".into(),
            completed_rounds: 2,
            rng_state: 99,
            dataset: tiny(),
        };
        let mut buf = Vec::new();
        save_checkpoint(&cp, &mut buf).unwrap();
        assert!(buf.starts_with(b"{\"completed_rounds\":2,\"config_digest\":\"abc\""));
        assert_eq!(load_checkpoint(&buf[..]).unwrap(), cp);
        // a plain dataset is not a checkpoint
        let plain = dataset_to_bytes(&tiny()).unwrap();
        assert!(load_checkpoint(&plain[..]).is_err());
    }
}
