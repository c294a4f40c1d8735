//! Naive reference implementation of every analyzer measure. Shares no code
//! with the library beyond the dataset types: its own tokenizer, document
//! frequencies, dense vectors and quadratic loops.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rankarena::analyzer::{analyze, AnalysisResources};
use rankarena::model::{CompetitionDataset, Document, GameRecord, RoundRecord};
use rankarena::text::StopwordList;

pub type Series = Vec<(u32, f64, usize)>;

pub const STOPWORDS: [&str; 3] = ["the", "of", "and"];

pub fn tok(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn counts(tokens: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.clone()).or_insert(0) += 1;
    }
    m
}

struct Df {
    n: usize,
    df: HashMap<String, usize>,
    total_tokens: usize,
}

impl Df {
    fn of(texts: &[String]) -> Df {
        let mut df = HashMap::new();
        let mut total_tokens = 0;
        for t in texts {
            let toks = tok(t);
            total_tokens += toks.len();
            let uniq: HashSet<String> = toks.into_iter().collect();
            for w in uniq {
                *df.entry(w).or_insert(0) += 1;
            }
        }
        Df { n: texts.len(), df, total_tokens }
    }

    fn df(&self, t: &str) -> usize {
        self.df.get(t).copied().unwrap_or(0)
    }

    fn weight(&self, t: &str, tf: usize) -> f64 {
        tf as f64 * (self.n as f64 / self.df(t).max(1) as f64).ln()
    }
}

fn similarity(a: &str, b: &str, df: &Df) -> f64 {
    let (ta, tb) = (tok(a), tok(b));
    if a == b || ta == tb {
        return 1.0;
    }
    let (ca, cb) = (counts(&ta), counts(&tb));
    let vocab: BTreeSet<&String> = ca.keys().chain(cb.keys()).collect();
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut any_a = false;
    let mut any_b = false;
    for t in vocab {
        let wa = ca.get(t).map_or(0.0, |&c| df.weight(t, c));
        let wb = cb.get(t).map_or(0.0, |&c| df.weight(t, c));
        any_a |= wa != 0.0;
        any_b |= wb != 0.0;
        dot += wa * wb;
        na += wa * wa;
        nb += wb * wb;
    }
    if !any_a || !any_b || dot == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).min(1.0)
}

fn rounds(g: &GameRecord) -> Vec<&RoundRecord> {
    std::iter::once(&g.initial).chain(g.rounds.iter()).collect()
}

fn at_rank(r: &RoundRecord, rank: u32) -> Option<&Document> {
    let e = r.ranking.iter().find(|e| e.rank == rank)?;
    r.documents.iter().find(|d| d.player_id == e.player_id)
}

fn sorted_games(d: &CompetitionDataset) -> Vec<&GameRecord> {
    let mut g: Vec<&GameRecord> = d.games.iter().collect();
    g.sort_by(|a, b| a.query.id.cmp(&b.query.id));
    g
}

/// Per-round (values in game order, contributing games).
#[derive(Default)]
struct Acc(BTreeMap<u32, (Vec<f64>, BTreeSet<usize>)>);

impl Acc {
    fn add(&mut self, round: u32, game: usize, v: f64) {
        let e = self.0.entry(round).or_default();
        e.0.push(v);
        e.1.insert(game);
    }

    fn done(self) -> Series {
        self.0
            .into_iter()
            .map(|(r, (vals, games))| {
                let mut sum = 0.0;
                for v in &vals {
                    sum += v;
                }
                (r, sum / vals.len() as f64, games.len())
            })
            .collect()
    }
}

struct Background {
    df: Df,
    lm: HashMap<String, f64>,
}

fn background(corpus: &[String], d: &CompetitionDataset) -> Background {
    let df = Df::of(corpus);
    let mut c: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for t in corpus {
        for w in tok(t) {
            *c.entry(w).or_insert(0) += 1;
            total += 1;
        }
    }
    for g in &d.games {
        for w in tok(&g.query.text) {
            c.entry(w).or_insert(0);
        }
    }
    let denom = (total + c.len()) as f64;
    let lm = c.into_iter().map(|(w, n)| (w, (n + 1) as f64 / denom)).collect();
    Background { df, lm }
}

fn feature(name: &str, doc: &str, query: &str, bg: Option<&Background>) -> Option<f64> {
    let d = tok(doc);
    let q = tok(query);
    let cd = counts(&d);
    match name {
        "length" => Some(d.len() as f64),
        "stopword_ratio" => {
            let s = d.iter().filter(|t| STOPWORDS.contains(&t.as_str())).count();
            let c = d.len() - s;
            match (s, c) {
                (0, 0) => Some(0.0),
                (_, 0) => None,
                _ => Some(s as f64 / c as f64),
            }
        }
        "entropy" => {
            if d.is_empty() {
                return None;
            }
            let mut h = 0.0;
            for &c in cd.values() {
                let p = c as f64 / d.len() as f64;
                h -= p * p.log2();
            }
            Some(if h == 0.0 { 0.0 } else { h })
        }
        "tf" => {
            let qs: BTreeSet<&String> = q.iter().collect();
            Some(qs.iter().map(|t| cd.get(*t).copied().unwrap_or(0)).sum::<usize>() as f64)
        }
        "bm25" => {
            let bg = bg?;
            let (k1, b) = (1.2, 0.75);
            let avg = bg.df.total_tokens as f64 / bg.df.n as f64;
            let norm = 1.0 - b + b * d.len() as f64 / avg;
            let qs: BTreeSet<&String> = q.iter().collect();
            let mut s = 0.0;
            for t in qs {
                let Some(&tf) = cd.get(t) else { continue };
                let n = bg.df.n as f64;
                let df = bg.df.df(t) as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * (tf as f64 * (k1 + 1.0) / (tf as f64 + k1 * norm));
            }
            Some(s)
        }
        "lm_dir" => {
            let bg = bg?;
            let mu = 1000.0;
            let mut s = 0.0;
            for w in &q {
                let tf = cd.get(w).copied().unwrap_or(0) as f64;
                let p = bg.lm.get(w).copied().unwrap_or(0.0);
                s += ((tf + mu * p) / (d.len() as f64 + mu)).ln();
            }
            Some(s)
        }
        _ => unreachable!(),
    }
}

pub struct OracleResult {
    pub series: BTreeMap<String, Series>,
    pub proportion_of_wins: f64,
    pub best: (String, usize, bool),
}

pub fn compute(d: &CompetitionDataset, corpus: Option<&[String]>) -> OracleResult {
    let all_texts: Vec<String> = d
        .games
        .iter()
        .flat_map(|g| rounds(g).into_iter().flat_map(|r| r.documents.iter().map(|x| x.text.clone())).collect::<Vec<_>>())
        .collect();
    let bg = corpus.map(|c| background(c, d));
    let sim_df = match corpus {
        Some(c) => Df::of(c),
        None => Df::of(&all_texts),
    };
    let games = sorted_games(d);
    let n_players = d.games[0].initial.documents.len();
    let mut series = BTreeMap::new();

    let mut features = vec!["length", "stopword_ratio", "entropy"];
    if bg.is_some() {
        features.push("lm_dir");
    }
    features.push("tf");
    if bg.is_some() {
        features.push("bm25");
    }
    for f in features {
        let mut acc = Acc::default();
        for (gi, g) in games.iter().enumerate() {
            let rs = rounds(g);
            for i in 0..rs.len() - 1 {
                let (a, b) = (at_rank(rs[i], 1).unwrap(), at_rank(rs[i + 1], 1).unwrap());
                if a.player_id == b.player_id {
                    continue;
                }
                let fa = feature(f, &a.text, &g.query.text, bg.as_ref());
                let fb = feature(f, &b.text, &g.query.text, bg.as_ref());
                if let (Some(x), Some(y)) = (fa, fb) {
                    acc.add(rs[i + 1].round, gi, (y - x).abs());
                }
            }
        }
        series.insert(format!("winner_delta_{f}"), acc.done());
    }

    let mut acc = Acc::default();
    for (gi, g) in games.iter().enumerate() {
        let rs = rounds(g);
        for i in 0..rs.len() - 1 {
            let (a, b) = (at_rank(rs[i], 1).unwrap(), at_rank(rs[i + 1], 1).unwrap());
            if a.player_id != b.player_id {
                acc.add(rs[i + 1].round, gi, similarity(&a.text, &b.text, &sim_df));
            }
        }
    }
    series.insert("winner_similarity".into(), acc.done());

    if n_players >= 2 {
        let mut top2 = Acc::default();
        let mut minsim = Acc::default();
        for (gi, g) in games.iter().enumerate() {
            for r in rounds(g) {
                let (a, b) = (at_rank(r, 1).unwrap(), at_rank(r, 2).unwrap());
                top2.add(r.round, gi, similarity(&a.text, &b.text, &sim_df));
                let mut m = f64::INFINITY;
                for x in &r.documents {
                    for y in &r.documents {
                        if x.player_id < y.player_id {
                            m = m.min(similarity(&x.text, &y.text, &sim_df));
                        }
                    }
                }
                minsim.add(r.round, gi, m);
            }
        }
        series.insert("top2_similarity".into(), top2.done());
        series.insert("min_interdoc_similarity".into(), minsim.done());
    }

    let mut uniq = Acc::default();
    let mut selfsim = Acc::default();
    for (gi, g) in games.iter().enumerate() {
        let rs = rounds(g);
        for r in &rs {
            let distinct: HashSet<Vec<String>> = r.documents.iter().map(|x| tok(&x.text)).collect();
            uniq.add(r.round, gi, distinct.len() as f64);
        }
        for i in 0..rs.len() - 1 {
            let mut players: Vec<&Document> = rs[i].documents.iter().collect();
            players.sort_by(|a, b| a.player_id.cmp(&b.player_id));
            for prev in players {
                let next = rs[i + 1].documents.iter().find(|x| x.player_id == prev.player_id).unwrap();
                selfsim.add(rs[i + 1].round, gi, similarity(&prev.text, &next.text, &sim_df));
            }
        }
    }
    series.insert("unique_documents".into(), uniq.done());
    series.insert("player_self_similarity".into(), selfsim.done());

    let mut ratio_sum = 0.0;
    let mut ratio_n = 0;
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for g in &games {
        let mut wins: BTreeMap<String, usize> =
            g.initial.documents.iter().map(|x| (x.player_id.clone(), 0)).collect();
        for r in &g.rounds {
            *wins.get_mut(&at_rank(r, 1).unwrap().player_id).unwrap() += 1;
        }
        if !g.rounds.is_empty() {
            let best = *wins.values().max().unwrap();
            ratio_sum += best as f64 / (g.rounds.len() as f64 / wins.len() as f64);
            ratio_n += 1;
        }
        for (p, w) in wins {
            *totals.entry(p).or_insert(0) += w;
        }
    }
    let max = *totals.values().max().unwrap();
    let leaders: Vec<&String> = totals.iter().filter(|(_, &w)| w == max).map(|(p, _)| p).collect();
    OracleResult {
        series,
        proportion_of_wins: ratio_sum / ratio_n as f64,
        best: (leaders[0].clone(), max, leaders.len() > 1),
    }
}

fn q12(v: f64) -> f64 {
    (v * 1e12).round()
}

/// Runs library and oracle on `d`; returns the number of compared points.
pub fn check(d: &CompetitionDataset, corpus: Option<&[String]>) -> Result<usize, String> {
    let stop = StopwordList::from_lines(&STOPWORDS.join("\n"));
    let res = match corpus {
        Some(c) => AnalysisResources::<f64>::from_corpus(c, d, stop),
        None => AnalysisResources::<f64>::from_dataset(d, stop),
    }
    .map_err(|e| e.to_string())?;
    let report = analyze(d, &res, None).map_err(|e| e.to_string())?;
    let expected = compute(d, corpus);
    let got: BTreeMap<String, Series> = report
        .series
        .iter()
        .map(|s| (s.name.clone(), s.points.iter().map(|p| (p.round, p.value, p.n_games)).collect()))
        .collect();
    let names: Vec<_> = got.keys().collect();
    let expected_names: Vec<_> = expected.series.keys().collect();
    if names != expected_names {
        return Err(format!("series sets differ: {names:?} vs {expected_names:?}"));
    }
    let mut compared = 0;
    for (name, exp) in &expected.series {
        let lib = &got[name];
        if lib.len() != exp.len() {
            return Err(format!("{name}: {} points vs oracle {}", lib.len(), exp.len()));
        }
        for (a, b) in lib.iter().zip(exp) {
            if a.0 != b.0 || a.2 != b.2 || q12(a.1) != q12(b.1) {
                return Err(format!("{name}: library {a:?} vs oracle {b:?}"));
            }
            compared += 1;
        }
    }
    if q12(report.proportion_of_wins) != q12(expected.proportion_of_wins) {
        return Err(format!(
            "proportion_of_wins {} vs {}",
            report.proportion_of_wins, expected.proportion_of_wins
        ));
    }
    let b = &report.best_player;
    if (b.player_id.clone(), b.total_wins, b.tie) != expected.best {
        return Err(format!("best_player {b:?} vs {:?}", expected.best));
    }
    Ok(compared + 2)
}
