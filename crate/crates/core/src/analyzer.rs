//! Measures over a finished competition: winner feature changes, several
//! similarity views, diversity, win concentration, graded annotations and
//! inter-annotator agreement.
//!
//! Per-round measures are reported at their round (round 0 included).
//! Transition measures over rounds (i, i+1) are reported at i + 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{CompetitionDataset, Document, GameRecord, Query};
use crate::scalar::{mean, Scalar};
use crate::text::{
    bm25_score, build_idf_table, cosine, dirichlet_ql, entropy, normalize, stopword_ratio,
    sum_query_tf, tfidf_vector, tokenize, Bm25Params, CollectionLm, IdfTable, StopwordList,
    TextError, TokenStream,
};

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("feature {0} needs analysis resources (idf table and collection model)")]
    MissingResources(Feature),
    #[error("measure {measure} needs ≥2 players, dataset has {players}")]
    TooFewPlayers { measure: &'static str, players: usize },
    #[error("dataset has no games")]
    EmptyDataset,
    #[error("kappa: {0}")]
    Kappa(String),
    #[error("annotations line {line}: {message}")]
    Annotation { line: u64, message: String },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePoint<T> {
    pub round: u32,
    pub value: T,
    pub n_games: usize,
}

/// Per-round values averaged over games.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSeries<T> {
    pub name: String,
    pub points: Vec<MeasurePoint<T>>,
}

impl<T: Scalar> MeasureSeries<T> {
    pub fn value_at(&self, round: u32) -> Option<T> {
        self.points.iter().find(|p| p.round == round).map(|p| p.value)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,value,n_games\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.round, p.value, p.n_games));
        }
        out
    }

    pub fn from_csv(name: &str, content: &str) -> Result<Self, AnalyzerError> {
        let mut reader = csv::Reader::from_reader(content.as_bytes());
        let mut points = Vec::new();
        for row in reader.deserialize() {
            let (round, value, n_games): (u32, f64, usize) = row?;
            points.push(MeasurePoint { round, value: T::of(value), n_games });
        }
        Ok(Self { name: name.to_string(), points })
    }
}

/// Collects per-game values by round; games must be fed in a fixed order so
/// the mean is reproducible.
struct SeriesBuilder<T> {
    rounds: BTreeMap<u32, (Vec<T>, BTreeSet<usize>)>,
}

impl<T: Scalar> SeriesBuilder<T> {
    fn new() -> Self {
        Self { rounds: BTreeMap::new() }
    }

    fn push(&mut self, round: u32, game: usize, value: T) {
        let slot = self.rounds.entry(round).or_default();
        slot.0.push(value);
        slot.1.insert(game);
    }

    fn finish(self, name: impl Into<String>) -> MeasureSeries<T> {
        MeasureSeries {
            name: name.into(),
            points: self
                .rounds
                .into_iter()
                .map(|(round, (values, games))| MeasurePoint {
                    round,
                    value: mean(&values).expect("rounds are created non-empty"),
                    n_games: games.len(),
                })
                .collect(),
        }
    }
}

/// Games ordered by id, the summation order of every measure.
pub fn games_by_id(dataset: &CompetitionDataset) -> Vec<&GameRecord> {
    let mut games: Vec<&GameRecord> = dataset.games.iter().collect();
    games.sort_by(|a, b| a.query.id.cmp(&b.query.id));
    games
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Length,
    StopwordRatio,
    Entropy,
    LmDir,
    Tf,
    Bm25,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Length,
        Feature::StopwordRatio,
        Feature::Entropy,
        Feature::LmDir,
        Feature::Tf,
        Feature::Bm25,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Length => "length",
            Feature::StopwordRatio => "stopword_ratio",
            Feature::Entropy => "entropy",
            Feature::LmDir => "lm_dir",
            Feature::Tf => "tf",
            Feature::Bm25 => "bm25",
        }
    }

    /// Needs the background idf table and collection model.
    pub fn needs_resources(self) -> bool {
        matches!(self, Feature::LmDir | Feature::Bm25)
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Background statistics for the query-dependent features.
#[derive(Debug, Clone)]
pub struct FeatureResources<T> {
    pub idf: IdfTable,
    pub collection: CollectionLm<T>,
    pub mu: T,
    pub bm25: Bm25Params<T>,
}

impl<T: Scalar> FeatureResources<T> {
    /// Statistics of `corpus`; the collection model also covers every
    /// query term so the query likelihood stays finite.
    pub fn from_corpus<S: AsRef<str>>(
        corpus: &[S],
        queries: &[Query],
    ) -> Result<Self, AnalyzerError> {
        let docs: Vec<TokenStream> = corpus.iter().map(|t| tokenize(t.as_ref())).collect();
        let idf = build_idf_table(docs.iter().cloned())?;
        let extra = queries
            .iter()
            .flat_map(|q| tokenize(&q.text).tokens().to_vec());
        Ok(Self {
            idf,
            collection: CollectionLm::estimate(docs.iter(), extra),
            mu: T::of(1000.0),
            bm25: Bm25Params::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisResources<T> {
    /// IDF behind every TF.IDF similarity.
    pub similarity_idf: IdfTable,
    pub stopwords: StopwordList,
    pub features: Option<FeatureResources<T>>,
}

impl<T: Scalar> AnalysisResources<T> {
    /// Similarity IDF over every document of the dataset; no feature
    /// resources.
    pub fn from_dataset(dataset: &CompetitionDataset, stopwords: StopwordList) -> Result<Self, AnalyzerError> {
        let idf = build_idf_table(
            dataset
                .games
                .iter()
                .flat_map(|g| g.all_rounds())
                .flat_map(|r| r.documents.iter())
                .map(|d| tokenize(&d.text)),
        )?;
        Ok(Self { similarity_idf: idf, stopwords, features: None })
    }

    /// Similarity and feature statistics both taken from a background corpus.
    pub fn from_corpus<S: AsRef<str>>(
        corpus: &[S],
        dataset: &CompetitionDataset,
        stopwords: StopwordList,
    ) -> Result<Self, AnalyzerError> {
        let queries: Vec<Query> = dataset.games.iter().map(|g| g.query.clone()).collect();
        let features = FeatureResources::from_corpus(corpus, &queries)?;
        Ok(Self {
            similarity_idf: features.idf.clone(),
            stopwords,
            features: Some(features),
        })
    }
}

/// TF.IDF cosine; documents equal after normalization score 1 without
/// vectorizing, which covers texts whose vectors are empty.
pub fn document_similarity<T: Scalar>(a: &str, b: &str, idf: &IdfTable) -> T {
    if a == b {
        return T::one();
    }
    let (ta, tb) = (tokenize(a), tokenize(b));
    if ta == tb {
        return T::one();
    }
    cosine(&tfidf_vector::<T>(&ta, idf), &tfidf_vector::<T>(&tb, idf))
}

/// Winners of two consecutive ranked rounds of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct WinnerPair<'a> {
    pub game_id: &'a str,
    pub round: u32,
    pub w_i: &'a Document,
    pub w_next: &'a Document,
    pub same_player: bool,
}

pub fn winner_pairs(game: &GameRecord) -> Vec<WinnerPair<'_>> {
    let rounds: Vec<_> = game.all_rounds().collect();
    rounds
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].winner()?, w[1].winner()?);
            Some(WinnerPair {
                game_id: &game.query.id,
                round: w[0].round,
                w_i: a,
                w_next: b,
                same_player: a.player_id == b.player_id,
            })
        })
        .collect()
}

/// Value of `feature` for one document; `None` where it is undefined
/// (stopword ratio of an all-stopword text, entropy of an empty text).
pub fn feature_value<T: Scalar>(
    feature: Feature,
    doc: &Document,
    query: &Query,
    resources: &AnalysisResources<T>,
) -> Result<Option<T>, AnalyzerError> {
    let d = tokenize(&doc.text);
    let q = tokenize(&query.text);
    let background = || resources.features.as_ref().ok_or(AnalyzerError::MissingResources(feature));
    Ok(match feature {
        Feature::Length => Some(T::count(d.len())),
        Feature::StopwordRatio => stopword_ratio::<T>(&d, &resources.stopwords).finite(),
        Feature::Entropy => entropy::<T>(&d).ok(),
        Feature::Tf => Some(T::count(sum_query_tf(&q, &d))),
        Feature::LmDir => {
            let f = background()?;
            Some(dirichlet_ql(&q, &d, &f.collection, f.mu)?)
        }
        Feature::Bm25 => {
            let f = background()?;
            let avg_dl = T::of(f.idf.avg_doc_len());
            Some(bm25_score(&q, &d, &f.idf, f.bm25, avg_dl)?)
        }
    })
}

/// Mean absolute change of a winner feature across consecutive rounds,
/// over games where the winner changed hands.
pub fn winner_feature_delta<T: Scalar>(
    dataset: &CompetitionDataset,
    feature: Feature,
    resources: &AnalysisResources<T>,
) -> Result<MeasureSeries<T>, AnalyzerError> {
    if feature.needs_resources() && resources.features.is_none() {
        return Err(AnalyzerError::MissingResources(feature));
    }
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for pair in winner_pairs(game).into_iter().filter(|p| !p.same_player) {
            let a = feature_value(feature, pair.w_i, &game.query, resources)?;
            let b = feature_value(feature, pair.w_next, &game.query, resources)?;
            if let (Some(a), Some(b)) = (a, b) {
                series.push(pair.round + 1, gi, (b - a).abs());
            }
        }
    }
    Ok(series.finish(format!("winner_delta_{}", feature.name())))
}

pub fn winner_similarity<T: Scalar>(dataset: &CompetitionDataset, idf: &IdfTable) -> MeasureSeries<T> {
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for pair in winner_pairs(game).into_iter().filter(|p| !p.same_player) {
            series.push(
                pair.round + 1,
                gi,
                document_similarity(&pair.w_i.text, &pair.w_next.text, idf),
            );
        }
    }
    series.finish("winner_similarity")
}

fn require_players(dataset: &CompetitionDataset, measure: &'static str) -> Result<(), AnalyzerError> {
    let players = dataset.player_ids().len();
    if players < 2 {
        return Err(AnalyzerError::TooFewPlayers { measure, players });
    }
    Ok(())
}

pub fn top2_similarity<T: Scalar>(
    dataset: &CompetitionDataset,
    idf: &IdfTable,
) -> Result<MeasureSeries<T>, AnalyzerError> {
    require_players(dataset, "top2_similarity")?;
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for round in game.all_rounds() {
            if let (Some(a), Some(b)) = (round.document_at_rank(1), round.document_at_rank(2)) {
                series.push(round.round, gi, document_similarity(&a.text, &b.text, idf));
            }
        }
    }
    Ok(series.finish("top2_similarity"))
}

pub fn min_interdoc_similarity<T: Scalar>(
    dataset: &CompetitionDataset,
    idf: &IdfTable,
) -> Result<MeasureSeries<T>, AnalyzerError> {
    require_players(dataset, "min_interdoc_similarity")?;
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for round in game.all_rounds() {
            let docs = &round.documents;
            let mut min: Option<T> = None;
            for i in 0..docs.len() {
                for j in i + 1..docs.len() {
                    let s = document_similarity(&docs[i].text, &docs[j].text, idf);
                    min = Some(min.map_or(s, |m| m.min(s)));
                }
            }
            if let Some(m) = min {
                series.push(round.round, gi, m);
            }
        }
    }
    Ok(series.finish("min_interdoc_similarity"))
}

pub fn unique_documents<T: Scalar>(dataset: &CompetitionDataset) -> MeasureSeries<T> {
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for round in game.all_rounds() {
            let distinct: BTreeSet<String> = round.documents.iter().map(|d| normalize(&d.text)).collect();
            series.push(round.round, gi, T::count(distinct.len()));
        }
    }
    series.finish("unique_documents")
}

/// Similarity of each player's consecutive documents, averaged over
/// players and games.
pub fn player_self_similarity<T: Scalar>(dataset: &CompetitionDataset, idf: &IdfTable) -> MeasureSeries<T> {
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        let rounds: Vec<_> = game.all_rounds().collect();
        for w in rounds.windows(2) {
            for prev in &w[0].documents {
                if let Some(next) = w[1].document(&prev.player_id) {
                    series.push(w[1].round, gi, document_similarity(&prev.text, &next.text, idf));
                }
            }
        }
    }
    series.finish("player_self_similarity")
}

/// Round-≥1 wins per player in one game.
pub fn win_counts(game: &GameRecord) -> BTreeMap<&str, usize> {
    let mut counts: BTreeMap<&str, usize> =
        game.initial.documents.iter().map(|d| (d.player_id.as_str(), 0)).collect();
    for round in &game.rounds {
        if let Some(w) = round.ranking.first() {
            *counts.entry(w.player_id.as_str()).or_insert(0) += 1;
        }
    }
    counts
}

/// Wins of each game's best player over the expected wins `rounds /
/// players`, averaged over games.
pub fn proportion_of_wins<T: Scalar>(dataset: &CompetitionDataset) -> Result<T, AnalyzerError> {
    let ratios: Vec<T> = games_by_id(dataset)
        .into_iter()
        .filter(|g| !g.rounds.is_empty())
        .map(|g| {
            let counts = win_counts(g);
            let best = counts.values().copied().max().unwrap_or(0);
            let expected = T::count(g.rounds.len()) / T::count(counts.len());
            T::count(best) / expected
        })
        .collect();
    mean(&ratios).ok_or(AnalyzerError::EmptyDataset)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BestPlayer {
    pub player_id: String,
    pub total_wins: usize,
    /// Another player has the same number of wins.
    pub tie: bool,
}

pub fn best_player(dataset: &CompetitionDataset) -> Result<BestPlayer, AnalyzerError> {
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for game in &dataset.games {
        for (p, n) in win_counts(game) {
            *totals.entry(p).or_insert(0) += n;
        }
    }
    let max = totals.values().copied().max().ok_or(AnalyzerError::EmptyDataset)?;
    let mut leaders = totals.iter().filter(|(_, &n)| n == max).map(|(p, _)| *p);
    let player_id = leaders.next().expect("max exists").to_string();
    Ok(BestPlayer { player_id, total_wins: max, tie: leaders.next().is_some() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
pub struct Annotation {
    pub n_annotators: u32,
    pub relevance_votes: u32,
    pub quality_votes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub by_doc: BTreeMap<String, Annotation>,
    pub calibration_target: u32,
}

#[derive(Deserialize)]
struct AnnotationRow {
    doc_id: String,
    n_annotators: u32,
    relevance_votes: u32,
    quality_votes: u32,
}

impl AnnotationSet {
    pub fn new(calibration_target: u32) -> Self {
        Self { by_doc: BTreeMap::new(), calibration_target }
    }

    /// Reads `doc_id,n_annotators,relevance_votes,quality_votes` CSV.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, AnalyzerError> {
        let mut set = Self::new(3);
        let mut csv = csv::Reader::from_reader(reader);
        for row in csv.deserialize() {
            let row: AnnotationRow = row?;
            let line = set.by_doc.len() as u64 + 2;
            let bad = |message: String| AnalyzerError::Annotation { line, message };
            if row.n_annotators == 0 {
                return Err(bad("n_annotators must be ≥ 1".into()));
            }
            if row.relevance_votes > row.n_annotators || row.quality_votes > row.n_annotators {
                return Err(bad(format!("votes exceed n_annotators for {}", row.doc_id)));
            }
            let ann = Annotation {
                n_annotators: row.n_annotators,
                relevance_votes: row.relevance_votes,
                quality_votes: row.quality_votes,
            };
            if set.by_doc.insert(row.doc_id.clone(), ann).is_some() {
                return Err(bad(format!("duplicate doc_id {}", row.doc_id)));
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, AnalyzerError> {
        Self::from_csv(fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeKind {
    Relevance,
    Quality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeSelector {
    WinnerOnly,
    All,
}

/// Raw vote count scaled to `target` annotators.
pub fn calibrate<T: Scalar>(votes: u32, n_annotators: u32, target: u32) -> T {
    T::count(votes as usize) * T::count(target as usize) / T::count(n_annotators as usize)
}

pub fn grade_series<T: Scalar>(
    dataset: &CompetitionDataset,
    annotations: &AnnotationSet,
    kind: GradeKind,
    selector: GradeSelector,
) -> MeasureSeries<T> {
    let mut series = SeriesBuilder::new();
    for (gi, game) in games_by_id(dataset).into_iter().enumerate() {
        for round in game.all_rounds() {
            let docs: Vec<&Document> = match selector {
                GradeSelector::WinnerOnly => round.winner().into_iter().collect(),
                GradeSelector::All => round.documents.iter().collect(),
            };
            for doc in docs {
                if let Some(a) = annotations.by_doc.get(&doc.doc_id) {
                    let votes = match kind {
                        GradeKind::Relevance => a.relevance_votes,
                        GradeKind::Quality => a.quality_votes,
                    };
                    series.push(
                        round.round,
                        gi,
                        calibrate(votes, a.n_annotators, annotations.calibration_target),
                    );
                }
            }
        }
    }
    let kind = match kind {
        GradeKind::Relevance => "relevance",
        GradeKind::Quality => "quality",
    };
    let selector = match selector {
        GradeSelector::WinnerOnly => "winner",
        GradeSelector::All => "all",
    };
    series.finish(format!("grade_{kind}_{selector}"))
}

/// Free-marginal multi-rater kappa. Each item lists its vote count per
/// category; all items share the category count.
pub fn free_marginal_kappa<T: Scalar>(items: &[Vec<u32>]) -> Result<T, AnalyzerError> {
    let k = items.first().map(Vec::len).ok_or_else(|| AnalyzerError::Kappa("no items".into()))?;
    if k < 2 {
        return Err(AnalyzerError::Kappa(format!("needs ≥2 categories, got {k}")));
    }
    let mut agreement = Vec::with_capacity(items.len());
    for (i, votes) in items.iter().enumerate() {
        if votes.len() != k {
            return Err(AnalyzerError::Kappa(format!("item {i} has {} categories, expected {k}", votes.len())));
        }
        let n: u32 = votes.iter().sum();
        if n < 2 {
            return Err(AnalyzerError::Kappa(format!("item {i} has {n} annotators, needs ≥2")));
        }
        let agree: u64 = votes.iter().map(|&c| c as u64 * (c as u64).saturating_sub(1)).sum();
        agreement.push(T::count(agree as usize) / T::count((n as usize) * (n as usize - 1)));
    }
    let p_o = mean(&agreement).expect("items non-empty");
    let chance = T::one() / T::count(k);
    Ok((p_o - chance) / (T::one() - chance))
}

/// Binary (valid / not valid) vote table of the annotated documents.
pub fn kappa_items(annotations: &AnnotationSet, kind: GradeKind) -> Vec<Vec<u32>> {
    annotations
        .by_doc
        .values()
        .map(|a| {
            let yes = match kind {
                GradeKind::Relevance => a.relevance_votes,
                GradeKind::Quality => a.quality_votes,
            };
            vec![yes, a.n_annotators - yes]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AnalysisReport<T> {
    pub series: Vec<MeasureSeries<T>>,
    pub proportion_of_wins: T,
    pub best_player: BestPlayer,
    /// Agreement per grade kind, when annotations were supplied.
    pub kappa: BTreeMap<String, T>,
    /// Measures left out, with the reason.
    pub skipped: Vec<String>,
}

/// Every applicable measure. Features needing background statistics are
/// skipped (and listed) when `resources.features` is absent.
pub fn analyze<T: Scalar>(
    dataset: &CompetitionDataset,
    resources: &AnalysisResources<T>,
    annotations: Option<&AnnotationSet>,
) -> Result<AnalysisReport<T>, AnalyzerError> {
    if dataset.games.is_empty() {
        return Err(AnalyzerError::EmptyDataset);
    }
    let idf = &resources.similarity_idf;
    let mut series = Vec::new();
    let mut skipped = Vec::new();
    for feature in Feature::ALL {
        if feature.needs_resources() && resources.features.is_none() {
            skipped.push(format!("winner_delta_{feature}: no analysis corpus"));
            continue;
        }
        series.push(winner_feature_delta(dataset, feature, resources)?);
    }
    series.push(winner_similarity(dataset, idf));
    match top2_similarity(dataset, idf) {
        Ok(s) => series.push(s),
        Err(e @ AnalyzerError::TooFewPlayers { .. }) => skipped.push(format!("top2_similarity: {e}")),
        Err(e) => return Err(e),
    }
    match min_interdoc_similarity(dataset, idf) {
        Ok(s) => series.push(s),
        Err(e @ AnalyzerError::TooFewPlayers { .. }) => {
            skipped.push(format!("min_interdoc_similarity: {e}"))
        }
        Err(e) => return Err(e),
    }
    series.push(unique_documents(dataset));
    series.push(player_self_similarity(dataset, idf));
    let mut kappa = BTreeMap::new();
    if let Some(ann) = annotations {
        for kind in [GradeKind::Relevance, GradeKind::Quality] {
            for selector in [GradeSelector::WinnerOnly, GradeSelector::All] {
                series.push(grade_series(dataset, ann, kind, selector));
            }
            let name = match kind {
                GradeKind::Relevance => "relevance",
                GradeKind::Quality => "quality",
            };
            match free_marginal_kappa(&kappa_items(ann, kind)) {
                Ok(k) => {
                    kappa.insert(name.to_string(), k);
                }
                Err(e) => skipped.push(format!("{name}_kappa: {e}")),
            }
        }
    }
    Ok(AnalysisReport {
        series,
        proportion_of_wins: proportion_of_wins(dataset)?,
        best_player: best_player(dataset)?,
        kappa,
        skipped,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<name>.csv` per series and `manifest.json`.
pub fn write_report<T: Scalar>(report: &AnalysisReport<T>, dir: &Path) -> Result<(), AnalyzerError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for s in &report.series {
        let file = format!("{}.csv", s.name);
        fs::write(dir.join(&file), s.to_csv())?;
        entries.push(json!({"name": s.name, "file": file, "points": s.points.len()}));
    }
    let kappa: BTreeMap<&str, f64> = report.kappa.iter().map(|(k, v)| (k.as_str(), v.as_f64())).collect();
    let manifest = json!({
        "series": entries,
        "proportion_of_wins": report.proportion_of_wins.as_f64(),
        "best_player": report.best_player,
        "kappa": kappa,
        "skipped": report.skipped,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Reads back every series listed in an analysis manifest.
pub fn read_report_series<T: Scalar>(dir: &Path) -> Result<Vec<MeasureSeries<T>>, AnalyzerError> {
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let entries = manifest["series"].as_array().cloned().unwrap_or_default();
    entries
        .iter()
        .map(|e| {
            let name = e["name"].as_str().unwrap_or_default();
            let file = e["file"].as_str().unwrap_or_default();
            MeasureSeries::from_csv(name, &fs::read_to_string(dir.join(file))?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RankEntry, RoundRecord};

    /// A game where `rounds[r]` lists (player, text) in rank order.
    fn game(id: &str, rounds: &[&[(&str, &str)]]) -> GameRecord {
        let record = |r: usize, docs: &[(&str, &str)]| {
            RoundRecord::new(
                r as u32,
                docs.iter().map(|(p, t)| Document::new("c", id, r as u32, p, *t)).collect(),
                docs.iter()
                    .enumerate()
                    .map(|(i, (p, _))| RankEntry { player_id: p.to_string(), rank: i as u32 + 1, score: 0.0 })
                    .collect(),
                vec![],
            )
        };
        GameRecord {
            query: Query { id: id.into(), text: "cat food".into() },
            initial: record(0, rounds[0]),
            rounds: rounds[1..].iter().enumerate().map(|(i, d)| record(i + 1, d)).collect(),
        }
    }

    fn dataset(games: Vec<GameRecord>) -> CompetitionDataset {
        CompetitionDataset {
            competition_id: "c".into(),
            config_digest: "d".into(),
            games,
            metadata: BTreeMap::new(),
        }
    }

    fn resources(d: &CompetitionDataset) -> AnalysisResources<f64> {
        AnalysisResources::from_dataset(d, StopwordList::english()).unwrap()
    }

    #[test]
    fn same_player_pairs_are_excluded() {
        let d = dataset(vec![game(
            "q",
            &[
                &[("a", "cat food here"), ("b", "dog toys")],
                &[("a", "cat food there"), ("b", "dog toys")],
                &[("b", "cat food cat"), ("a", "cat food there")],
            ],
        )]);
        let r = resources(&d);
        let s = winner_feature_delta(&d, Feature::Length, &r).unwrap();
        assert_eq!(s.points, vec![MeasurePoint { round: 2, value: 0.0, n_games: 1 }]);
        let s = winner_feature_delta(&d, Feature::Tf, &r).unwrap();
        assert_eq!(s.value_at(2), Some(1.0));
        assert_eq!(winner_similarity::<f64>(&d, &r.similarity_idf).points.len(), 1);
    }

    #[test]
    fn query_dependent_features_need_resources() {
        let d = dataset(vec![game("q", &[&[("a", "x"), ("b", "y")], &[("b", "x"), ("a", "y")]])]);
        assert!(matches!(
            winner_feature_delta(&d, Feature::Bm25, &resources(&d)),
            Err(AnalyzerError::MissingResources(Feature::Bm25))
        ));
        let r = AnalysisResources::<f64>::from_corpus(&["cat food", "dog"], &d, StopwordList::english()).unwrap();
        assert!(winner_feature_delta(&d, Feature::LmDir, &r).is_ok());
    }

    #[test]
    fn similarity_edge_cases() {
        let idf = IdfTable::from_counts(10, BTreeMap::from([("a".into(), 1), ("b".into(), 1)]), 10).unwrap();
        assert_eq!(document_similarity::<f64>("the", "the", &idf), 1.0);
        assert_eq!(document_similarity::<f64>("A  b", "a b", &idf), 1.0);
        assert_eq!(document_similarity::<f64>("a", "b", &idf), 0.0);
    }

    #[test]
    fn unique_documents_counts_normalized_texts() {
        let d = dataset(vec![game("q", &[&[("a", "x y"), ("b", "X  y!"), ("c", "z")]])]);
        assert_eq!(unique_documents::<f64>(&d).value_at(0), Some(2.0));
    }

    #[test]
    fn one_player_has_no_top2() {
        let d = dataset(vec![game("q", &[&[("a", "x")], &[("a", "x")]])]);
        let err = top2_similarity::<f64>(&d, &resources(&d).similarity_idf).unwrap_err();
        assert!(err.to_string().contains("needs ≥2 players"));
    }

    fn wins_game(winners: &[&str], players: &[&str]) -> GameRecord {
        let mut rounds: Vec<Vec<(&str, &str)>> = vec![players.iter().map(|p| (*p, "t")).collect()];
        for w in winners {
            let mut r = vec![(*w, "t")];
            r.extend(players.iter().filter(|p| *p != w).map(|p| (*p, "t")));
            rounds.push(r);
        }
        let refs: Vec<&[(&str, &str)]> = rounds.iter().map(|r| r.as_slice()).collect();
        game("q", &refs)
    }

    #[test]
    fn proportion_of_wins_formula() {
        let players = ["p1", "p2", "p3", "p4"];
        let winners = ["p1", "p1", "p2", "p1", "p3", "p1", "p4"];
        let d = dataset(vec![wins_game(&winners, &players)]);
        assert!((proportion_of_wins::<f64>(&d).unwrap() - 16.0 / 7.0).abs() < 1e-12);
        let best = best_player(&d).unwrap();
        assert_eq!((best.player_id.as_str(), best.total_wins, best.tie), ("p1", 4, false));
    }

    #[test]
    fn best_player_tie_is_flagged() {
        let d = dataset(vec![wins_game(&["b", "a"], &["a", "b"])]);
        let best = best_player(&d).unwrap();
        assert_eq!((best.player_id.as_str(), best.tie), ("a", true));
    }

    #[test]
    fn calibration() {
        assert_eq!(calibrate::<f64>(5, 5, 3), 3.0);
        assert_eq!(calibrate::<f64>(2, 3, 3), 2.0);
    }

    #[test]
    fn sparse_annotations_give_sparse_series() {
        let g = game("q", &[&[("a", "x"), ("b", "y")], &[("a", "x"), ("b", "y")], &[("a", "x"), ("b", "y")]]);
        let d = dataset(vec![g]);
        let csv = "doc_id,n_annotators,relevance_votes,quality_votes\nc/q/0/a,5,5,4\nc/q/2/a,5,0,5\n";
        let ann = AnnotationSet::from_csv(csv.as_bytes()).unwrap();
        let s = grade_series::<f64>(&d, &ann, GradeKind::Relevance, GradeSelector::WinnerOnly);
        assert_eq!(s.points.iter().map(|p| (p.round, p.value)).collect::<Vec<_>>(), vec![(0, 3.0), (2, 0.0)]);
    }

    #[test]
    fn annotation_votes_are_validated() {
        let csv = "doc_id,n_annotators,relevance_votes,quality_votes\nx,3,4,0\n";
        assert!(matches!(
            AnnotationSet::from_csv(csv.as_bytes()),
            Err(AnalyzerError::Annotation { line: 2, .. })
        ));
    }

    #[test]
    fn kappa_extremes_and_errors() {
        assert_eq!(free_marginal_kappa::<f64>(&[vec![5, 0], vec![0, 5]]).unwrap(), 1.0);
        assert_eq!(free_marginal_kappa::<f64>(&[vec![1, 1], vec![1, 1]]).unwrap(), -1.0);
        assert!(free_marginal_kappa::<f64>(&[vec![1, 0]]).is_err());
        assert!(free_marginal_kappa::<f64>(&[vec![3]]).is_err());
    }

    #[test]
    fn series_csv_round_trips() {
        let s = MeasureSeries {
            name: "m".into(),
            points: vec![
                MeasurePoint { round: 1, value: 0.1f64 + 0.2, n_games: 3 },
                MeasurePoint { round: 2, value: 1.0 / 3.0, n_games: 1 },
            ],
        };
        assert_eq!(MeasureSeries::from_csv("m", &s.to_csv()).unwrap(), s);
    }
}
