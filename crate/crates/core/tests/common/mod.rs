#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rankarena::model::{CompetitionConfig, CompetitionDataset, Document, GameRecord, Query, RankEntry, RoundRecord};
use serde_json::{json, Value};

/// Players as (id, agent JSON).
pub fn config_with(n_queries: usize, players: &[(&str, Value)], rounds: u32, extra: Value) -> CompetitionConfig {
    let queries: Vec<Value> = (1..=n_queries)
        .map(|i| {
            let docs: BTreeMap<&str, String> = players
                .iter()
                .enumerate()
                .map(|(j, (p, _))| {
                    (*p, format!("Initial document {j} on subject{i} with filler words number {}", i * 7 + j))
                })
                .collect();
            json!({"id": format!("q{i:02}"), "text": format!("subject{i} filler guide"), "initial_documents": docs})
        })
        .collect();
    let players: Vec<Value> = players
        .iter()
        .map(|(id, agent)| json!({"id": id, "agent": agent}))
        .collect();
    let mut cfg = json!({
        "competition_id": "test",
        "rounds": rounds,
        "rng_seed": 11,
        "ranker": {"kind": "okapi"},
        "queries": queries,
        "players": players,
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        base.extend(more);
    }
    serde_json::from_value(cfg).expect("test config is well-formed")
}

pub fn scripted(strategy: &str) -> Value {
    json!({"kind": "scripted", "strategy": strategy})
}

pub fn llm(model: &str, context: &str) -> Value {
    json!({"kind": "llm", "model": model, "prompt": {"kind": context}})
}

/// Mixed mock-LLM and scripted players, `n` of them.
pub fn mixed_players(n: usize) -> Vec<(String, Value)> {
    (0..n)
        .map(|i| {
            let agent = match i % 4 {
                0 => llm("mock-a", "listwise"),
                1 => llm("mock-b", "pairwise"),
                2 => scripted("copycat"),
                _ => scripted("term_injector"),
            };
            (format!("p{i}"), agent)
        })
        .collect()
}

pub fn as_refs(players: &[(String, Value)]) -> Vec<(&str, Value)> {
    players.iter().map(|(p, v)| (p.as_str(), v.clone())).collect()
}

const VOCAB: [&str; 14] = [
    "the", "of", "and", "dog", "cat", "food", "park", "river", "stone", "blue", "run", "sky", "2020", "e5",
];

fn random_text<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(0..10);
    let words: Vec<String> = (0..n)
        .map(|_| {
            let w = VOCAB[rng.gen_range(0..VOCAB.len())];
            if rng.gen_bool(0.15) {
                w.to_uppercase()
            } else {
                w.to_string()
            }
        })
        .collect();
    let sep = if rng.gen_bool(0.2) { ",  " } else { " " };
    words.join(sep)
}

/// Random dataset with ≤3 games, ≤5 rounds, ≤5 players. Texts repeat across
/// players and rounds often enough to exercise the identical-text paths.
pub fn random_dataset<R: Rng>(rng: &mut R) -> CompetitionDataset {
    let n_games = rng.gen_range(1..=3);
    let n_rounds = rng.gen_range(1..=5u32);
    let n_players = rng.gen_range(1..=5);
    let players: Vec<String> = (0..n_players).map(|i| format!("p{i}")).collect();
    let mut games = Vec::new();
    for g in 0..n_games {
        let qid = format!("q{}", (g * 7 + 3) % 10);
        let query = Query { id: qid.clone(), text: format!("{} {}", VOCAB[g + 3], VOCAB[rng.gen_range(0..VOCAB.len())]) };
        let mut records: Vec<RoundRecord> = Vec::new();
        for r in 0..=n_rounds {
            let mut texts: Vec<String> = Vec::new();
            for _ in &players {
                let t = match rng.gen_range(0..10) {
                    0..=2 if !texts.is_empty() => texts[rng.gen_range(0..texts.len())].clone(),
                    3..=4 if !records.is_empty() => {
                        let prev = records.last().unwrap();
                        prev.documents[rng.gen_range(0..prev.documents.len())].text.clone()
                    }
                    _ => random_text(rng),
                };
                texts.push(t);
            }
            let docs: Vec<Document> = players
                .iter()
                .zip(&texts)
                .map(|(p, t)| Document::new("rand", &qid, r, p, t.clone()))
                .collect();
            let mut order = players.clone();
            order.shuffle(rng);
            let ranking = order
                .iter()
                .enumerate()
                .map(|(i, p)| RankEntry { player_id: p.clone(), rank: i as u32 + 1, score: (n_players - i) as f64 })
                .collect();
            records.push(RoundRecord::new(r, docs, ranking, vec![]));
        }
        let initial = records.remove(0);
        games.push(GameRecord { query, initial, rounds: records });
    }
    let d = CompetitionDataset {
        competition_id: "rand".into(),
        config_digest: "0".repeat(64),
        games,
        metadata: BTreeMap::new(),
    };
    d.validate().expect("generated dataset is valid");
    d
}

/// A game whose winners per round ≥ 1 are given; round 0 ranks players in
/// order. All documents share one text.
pub fn game_with_winners(qid: &str, players: &[&str], winners: &[&str]) -> GameRecord {
    let record = |round: u32, first: Option<&str>| {
        let mut order: Vec<&str> = first.into_iter().collect();
        order.extend(players.iter().filter(|p| Some(**p) != first));
        RoundRecord::new(
            round,
            players.iter().map(|p| Document::new("syn", qid, round, p, "same text")).collect(),
            order
                .iter()
                .enumerate()
                .map(|(i, p)| RankEntry { player_id: p.to_string(), rank: i as u32 + 1, score: 0.0 })
                .collect(),
            vec![],
        )
    };
    GameRecord {
        query: Query { id: qid.into(), text: "query".into() },
        initial: record(0, None),
        rounds: winners.iter().enumerate().map(|(i, w)| record(i as u32 + 1, Some(w))).collect(),
    }
}

pub fn dataset_of(games: Vec<GameRecord>) -> CompetitionDataset {
    CompetitionDataset {
        competition_id: "syn".into(),
        config_digest: "0".repeat(64),
        games,
        metadata: BTreeMap::new(),
    }
}
