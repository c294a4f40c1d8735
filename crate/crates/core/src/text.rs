//! Tokenization, term statistics and the document features used by the
//! analyzer and the sparse ranker.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("entropy undefined for empty document")]
    EmptyDocument,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("zero-probability query term: {0}")]
    ZeroProbability(String),
    #[error("background corpus is empty")]
    EmptyCorpus,
    #[error("corpus error: {0}")]
    Corpus(String),
}

/// Byte ranges of the tokens of `text`: maximal runs of alphanumeric chars.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Ordered lowercase terms of a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tokens: tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Term frequencies in sorted term order.
    pub fn term_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn tf(&self, term: &str) -> usize {
        self.tokens.iter().filter(|t| *t == term).count()
    }

    pub fn distinct(&self) -> BTreeSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }

    /// Tokens rejoined with single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenStream {
    TokenStream {
        tokens: token_spans(text)
            .into_iter()
            .map(|r| text[r].to_lowercase())
            .collect(),
    }
}

/// Token-normalized text used for document equality.
pub fn normalize(text: &str) -> String {
    tokenize(text).joined()
}

pub fn doc_length(d: &TokenStream) -> usize {
    d.len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    terms: BTreeSet<String>,
}

const DEFAULT_STOPWORDS: &str = include_str!("../resources/stopwords_en.txt");

impl StopwordList {
    /// Parses one term per line; blank lines and `#` comments are skipped.
    pub fn from_lines(content: &str) -> Self {
        let terms = content
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { terms }
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let content = fs::read_to_string(path)
            .map_err(|e| TextError::Corpus(format!("{}: {e}", path.display())))?;
        Ok(Self::from_lines(&content))
    }

    /// The bundled English list (418 terms).
    pub fn english() -> Self {
        Self::from_lines(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl FromIterator<String> for StopwordList {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self {
            terms: iter.into_iter().map(|t| t.to_lowercase()).collect(),
        }
    }
}

/// Stopword-to-non-stopword ratio of a document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopwordRatio<T> {
    Finite(T),
    /// Every token is a stopword; the ratio is unbounded.
    AllStopwords,
}

impl<T: Scalar> StopwordRatio<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            StopwordRatio::Finite(v) => Some(v),
            StopwordRatio::AllStopwords => None,
        }
    }
}

pub fn stopword_ratio<T: Scalar>(d: &TokenStream, stopwords: &StopwordList) -> StopwordRatio<T> {
    let stop = d.iter().filter(|t| stopwords.contains(t)).count();
    let content = d.len() - stop;
    match (stop, content) {
        (0, 0) => StopwordRatio::Finite(T::zero()),
        (_, 0) => StopwordRatio::AllStopwords,
        (s, c) => StopwordRatio::Finite(T::count(s) / T::count(c)),
    }
}

/// Base-2 entropy of the unsmoothed unigram ML model of `d`.
pub fn entropy<T: Scalar>(d: &TokenStream) -> Result<T, TextError> {
    if d.is_empty() {
        return Err(TextError::EmptyDocument);
    }
    let n = T::count(d.len());
    let h = d.term_counts().values().fold(T::zero(), |acc, &c| {
        let p = T::count(c) / n;
        acc - p * p.log2()
    });
    Ok(if h == T::zero() { T::zero() } else { h })
}

/// Sum over distinct query terms of their frequency in `d`.
pub fn sum_query_tf(q: &TokenStream, d: &TokenStream) -> usize {
    let counts = d.term_counts();
    q.distinct()
        .into_iter()
        .map(|t| counts.get(t).copied().unwrap_or(0))
        .sum()
}

/// Document frequencies over a background corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdfTable {
    doc_count: usize,
    df: BTreeMap<String, usize>,
    total_tokens: u64,
}

impl IdfTable {
    /// Builds from explicit counts. `total_tokens` is the corpus token count
    /// used for the average document length.
    pub fn from_counts(
        doc_count: usize,
        df: BTreeMap<String, usize>,
        total_tokens: u64,
    ) -> Result<Self, TextError> {
        if doc_count == 0 {
            return Err(TextError::EmptyCorpus);
        }
        if let Some((t, &n)) = df.iter().find(|(_, &n)| n == 0 || n > doc_count) {
            return Err(TextError::InvalidParameter(format!(
                "df[{t}]={n} outside 1..={doc_count}"
            )));
        }
        Ok(Self {
            doc_count,
            df,
            total_tokens,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// Document frequency, 0 for unseen terms.
    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.df.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_tokens as f64 / self.doc_count as f64
    }
}

pub fn build_idf_table<I>(corpus: I) -> Result<IdfTable, TextError>
where
    I: IntoIterator<Item = TokenStream>,
{
    build_idf_table_with(corpus, |t| t.to_string())
}

/// Like [`build_idf_table`], passing every term through `normalizer`
/// (e.g. a stemmer) before counting.
pub fn build_idf_table_with<I, F>(corpus: I, normalizer: F) -> Result<IdfTable, TextError>
where
    I: IntoIterator<Item = TokenStream>,
    F: Fn(&str) -> String,
{
    let mut doc_count = 0usize;
    let mut total = 0u64;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        doc_count += 1;
        total += doc.len() as u64;
        let seen: BTreeSet<String> = doc
            .iter()
            .map(&normalizer)
            .filter(|t| !t.is_empty())
            .collect();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    IdfTable::from_counts(doc_count, df, total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params<T> {
    pub k1: T,
    pub b: T,
}

impl<T: Scalar> Default for Bm25Params<T> {
    fn default() -> Self {
        Self {
            k1: T::of(1.2),
            b: T::of(0.75),
        }
    }
}

/// Non-negative BM25 idf: `ln((N - df + 0.5) / (df + 0.5) + 1)`.
pub fn bm25_idf<T: Scalar>(idf: &IdfTable, term: &str) -> T {
    let n = T::count(idf.doc_count());
    let df = T::count(idf.df(term));
    let half = T::of(0.5);
    ((n - df + half) / (df + half) + T::one()).ln()
}

pub fn bm25_score<T: Scalar>(
    q: &TokenStream,
    d: &TokenStream,
    idf: &IdfTable,
    params: Bm25Params<T>,
    avg_dl: T,
) -> Result<T, TextError> {
    if !(avg_dl > T::zero()) {
        return Err(TextError::InvalidParameter(format!(
            "avg_dl must be > 0, got {avg_dl}"
        )));
    }
    if params.k1 < T::zero() || params.b < T::zero() || params.b > T::one() {
        return Err(TextError::InvalidParameter(format!(
            "need k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
            params.k1, params.b
        )));
    }
    let counts = d.term_counts();
    let norm = T::one() - params.b + params.b * T::count(d.len()) / avg_dl;
    let mut score = T::zero();
    for term in q.distinct() {
        let Some(&tf) = counts.get(term) else { continue };
        let tf = T::count(tf);
        let weight = tf * (params.k1 + T::one()) / (tf + params.k1 * norm);
        score = score + bm25_idf::<T>(idf, term) * weight;
    }
    Ok(score)
}

/// Unigram collection language model `p(w|C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionLm<T> {
    probs: BTreeMap<String, T>,
}

impl<T: Scalar> CollectionLm<T> {
    pub fn from_probs(probs: BTreeMap<String, T>) -> Self {
        Self { probs }
    }

    /// Add-one estimate over the corpus vocabulary plus `extra_vocab`, so
    /// every listed term gets non-zero mass.
    pub fn estimate<'a, I, V>(corpus: I, extra_vocab: V) -> Self
    where
        I: IntoIterator<Item = &'a TokenStream>,
        V: IntoIterator<Item = String>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for doc in corpus {
            for t in doc.iter() {
                *counts.entry(t.to_string()).or_insert(0) += 1;
                total += 1;
            }
        }
        for t in extra_vocab {
            counts.entry(t).or_insert(0);
        }
        let denom = T::count(total + counts.len());
        let probs = counts
            .into_iter()
            .map(|(t, c)| (t, T::count(c + 1) / denom))
            .collect();
        Self { probs }
    }

    pub fn prob(&self, term: &str) -> T {
        self.probs.get(term).copied().unwrap_or_else(T::zero)
    }
}

/// Dirichlet-smoothed query log-likelihood (natural log).
pub fn dirichlet_ql<T: Scalar>(
    q: &TokenStream,
    d: &TokenStream,
    collection: &CollectionLm<T>,
    mu: T,
) -> Result<T, TextError> {
    if !(mu > T::zero()) {
        return Err(TextError::InvalidParameter(format!("mu must be > 0, got {mu}")));
    }
    let counts = d.term_counts();
    let denom = T::count(d.len()) + mu;
    let mut score = T::zero();
    for w in q.iter() {
        let tf = counts.get(w).copied().unwrap_or(0);
        let pc = collection.prob(w);
        if tf == 0 && pc == T::zero() {
            return Err(TextError::ZeroProbability(w.to_string()));
        }
        score = score + ((T::count(tf) + mu * pc) / denom).ln();
    }
    Ok(score)
}

/// Sparse non-negative term weights. Zero weights are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermVector<T> {
    weights: BTreeMap<String, T>,
}

impl<T: Scalar> TermVector<T> {
    pub fn from_weights<I: IntoIterator<Item = (String, T)>>(weights: I) -> Self {
        Self {
            weights: weights
                .into_iter()
                .filter(|(_, w)| *w != T::zero() && w.is_finite())
                .collect(),
        }
    }

    pub fn get(&self, term: &str) -> T {
        self.weights.get(term).copied().unwrap_or_else(T::zero)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, T)> {
        self.weights.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn norm(&self) -> T {
        self.weights
            .values()
            .fold(T::zero(), |acc, &w| acc + w * w)
            .sqrt()
    }
}

/// `tf * ln(N / df)`; terms unseen in the table count as df = 1.
pub fn tfidf_vector<T: Scalar>(d: &TokenStream, idf: &IdfTable) -> TermVector<T> {
    let n = T::count(idf.doc_count());
    TermVector::from_weights(d.term_counts().into_iter().map(|(t, tf)| {
        let df = idf.df(t).max(1);
        (t.to_string(), T::count(tf) * (n / T::count(df)).ln())
    }))
}

/// Cosine similarity; 0 when either vector is empty.
pub fn cosine<T: Scalar>(u: &TermVector<T>, v: &TermVector<T>) -> T {
    if u.is_empty() || v.is_empty() {
        return T::zero();
    }
    let (small, large) = if u.len() <= v.len() { (u, v) } else { (v, u) };
    let dot = small
        .iter()
        .fold(T::zero(), |acc, (t, w)| acc + w * large.get(t));
    if dot == T::zero() {
        return T::zero();
    }
    let norms = u.weights.values().fold(T::zero(), |acc, &w| acc + w * w)
        * v.weights.values().fold(T::zero(), |acc, &w| acc + w * w);
    (dot / norms.sqrt()).min(T::one())
}

/// Cosine of two dense vectors; 0 if either has zero norm.
pub fn dense_cosine<T: Scalar>(u: &[T], v: &[T]) -> T {
    let dot = u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    let nu = u.iter().fold(T::zero(), |acc, &a| acc + a * a);
    let nv = v.iter().fold(T::zero(), |acc, &b| acc + b * b);
    if nu == T::zero() || nv == T::zero() {
        return T::zero();
    }
    dot / (nu * nv).sqrt()
}

#[derive(Deserialize)]
struct CorpusRecord {
    #[allow(dead_code)]
    id: Option<serde_json::Value>,
    text: String,
}

/// Reads a background corpus: a directory of plain-text files (sorted by
/// file name, non-recursive) or a JSONL file of `{id, text}` records.
pub fn load_corpus(path: &Path) -> Result<Vec<String>, TextError> {
    let err = |e: std::io::Error| TextError::Corpus(format!("{}: {e}", path.display()));
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| fs::read_to_string(p).map_err(err))
            .collect()
    } else {
        let content = fs::read_to_string(path).map_err(err)?;
        content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<CorpusRecord>(l)
                    .map(|r| r.text)
                    .map_err(|e| TextError::Corpus(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}
