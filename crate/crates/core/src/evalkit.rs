//! Retrieval metrics and comparison reports.
//!
//! Keyword queries are scored with macro-averaged precision/recall/F1 over
//! the top-5 results; sentence queries with Hits@K, the fraction of queries
//! whose top-K results contain at least one gold feature. Reports carry
//! per-query rows plus aggregates, and render as aligned text tables whose
//! numbers re-parse to the stored aggregates exactly.

use crate::baselines::{bm25_search, fts_search, LexicalIndex};
use crate::catalog::{QueryKind, QueryRecord};
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::index::{search, EmbeddingIndex, SearchResult};
use crate::tokenizer::Vocab;
use serde::Serialize;
use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;

/// Rank cutoff: a fixed depth or the whole returned list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KCut {
    At(usize),
    All,
}

impl KCut {
    pub fn label(&self) -> String {
        match self {
            KCut::At(k) => format!("@{k}"),
            KCut::All => "@all".to_string(),
        }
    }

    fn prefix_len(&self, list_len: usize) -> usize {
        match self {
            KCut::At(k) => (*k).min(list_len),
            KCut::All => list_len,
        }
    }
}

impl fmt::Display for KCut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for KCut {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(KCut::All);
        }
        let k: usize = s
            .parse()
            .map_err(|_| Error::config(format!("bad K cutoff {s:?}; expected a number or 'all'")))?;
        if k == 0 {
            return Err(Error::config("K cutoff must be at least 1"));
        }
        Ok(KCut::At(k))
    }
}

/// Precision, recall, and F1 over the top-`k` retrieved ids.
///
/// Precision counts irrelevant retrieved results as negatives; recall is
/// against the full gold set; both are 0 for an empty retrieval.
pub fn prf_at_k(retrieved: &[String], gold: &[String], k: usize) -> Result<(f64, f64, f64)> {
    if k < 1 {
        return Err(Error::config("top-K for precision/recall must be at least 1"));
    }
    if gold.is_empty() {
        return Err(Error::validation("gold set must not be empty"));
    }
    let gold_set: HashSet<&str> = gold.iter().map(|s| s.as_str()).collect();
    let top = &retrieved[..k.min(retrieved.len())];
    let inter = top.iter().filter(|id| gold_set.contains(id.as_str())).count() as f64;
    let precision = if top.is_empty() { 0.0 } else { inter / top.len() as f64 };
    let recall = inter / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// 1 iff the top-`cut` retrieved ids intersect the gold set.
pub fn hits_at_k(retrieved: &[String], gold: &[String], cut: KCut) -> Result<bool> {
    if let KCut::At(0) = cut {
        return Err(Error::config("K cutoff must be at least 1"));
    }
    if gold.is_empty() {
        return Err(Error::validation("gold set must not be empty"));
    }
    let gold_set: HashSet<&str> = gold.iter().map(|s| s.as_str()).collect();
    let top = &retrieved[..cut.prefix_len(retrieved.len())];
    Ok(top.iter().any(|id| gold_set.contains(id.as_str())))
}

/// A retrieval engine the evaluator can drive.
pub trait SearchEngine {
    fn name(&self) -> &str;
    /// Number of indexed documents; the evaluator requests rankings this deep.
    fn doc_count(&self) -> usize;
    fn search(&self, query: &str, k: usize) -> Result<SearchResult>;
}

/// Bi-encoder search over an embedding index.
pub struct NeuralEngine<'a> {
    pub index: &'a EmbeddingIndex,
    pub params: &'a ModelParams<f32>,
    pub config: &'a EncoderConfig,
    pub vocab: &'a Vocab,
    /// Hits scoring below this cosine are dropped, as in thresholded runs.
    pub threshold: Option<f64>,
}

impl SearchEngine for NeuralEngine<'_> {
    fn name(&self) -> &str {
        "neural"
    }

    fn doc_count(&self) -> usize {
        self.index.len()
    }

    fn search(&self, query: &str, k: usize) -> Result<SearchResult> {
        search(self.index, self.params, self.config, self.vocab, query, k, self.threshold)
    }
}

/// Term-count full-text search baseline.
pub struct FtsEngine<'a> {
    pub index: &'a LexicalIndex,
}

impl SearchEngine for FtsEngine<'_> {
    fn name(&self) -> &str {
        "fts"
    }

    fn doc_count(&self) -> usize {
        self.index.doc_count()
    }

    fn search(&self, query: &str, k: usize) -> Result<SearchResult> {
        fts_search(self.index, query, k)
    }
}

/// BM25 baseline with default parameters.
pub struct Bm25Engine<'a> {
    pub index: &'a LexicalIndex,
}

impl SearchEngine for Bm25Engine<'_> {
    fn name(&self) -> &str {
        "bm25"
    }

    fn doc_count(&self) -> usize {
        self.index.doc_count()
    }

    fn search(&self, query: &str, k: usize) -> Result<SearchResult> {
        bm25_search(self.index, query, k)
    }
}

/// Evaluation settings.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Depth for keyword precision/recall/F1.
    pub prf_k: usize,
    /// Cutoffs for sentence Hits@K.
    pub hit_cuts: Vec<KCut>,
    pub catalog_fingerprint: String,
    pub model_fingerprint: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            prf_k: 5,
            hit_cuts: vec![KCut::At(5), KCut::At(10), KCut::At(20), KCut::All],
            catalog_fingerprint: String::new(),
            model_fingerprint: None,
        }
    }
}

/// Per-query keyword metrics, as raw fractions in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrfRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-query hit flag at once cutoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutHit {
    pub cut: String,
    pub hit: bool,
}

/// One evaluated query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub query: String,
    pub retrieved: Vec<String>,
    pub gold: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prf: Option<PrfRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<Vec<CutHit>>,
}

/// Aggregate percentage at one cutoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutValue {
    pub cut: String,
    pub percent: f64,
}

/// Macro aggregates, stored as percentages rounded to 1 decimal.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Aggregates {
    Keyword { precision: f64, recall: f64, f1: f64 },
    Sentence { hits: Vec<CutValue> },
}

/// Evaluation result for one engine over one homogeneous query set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub engine: String,
    pub kind: String,
    pub query_count: usize,
    pub aggregates: Aggregates,
    pub rows: Vec<EvalRow>,
    pub catalog_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn pct(fraction: f64) -> f64 {
    round1(fraction * 100.0)
}

/// Run every query through `engine` and aggregate the kind's metrics.
pub fn evaluate(
    engine: &dyn SearchEngine,
    queries: &[QueryRecord],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let Some(first) = queries.first() else {
        return Err(Error::validation("query set is empty"));
    };
    let kind = first.kind;
    if let Some(bad) = queries.iter().find(|q| q.kind != kind) {
        return Err(Error::validation(format!(
            "mixed query kinds in one evaluation: {kind} and {} (query {:?})",
            bad.kind, bad.text
        )));
    }
    if kind == QueryKind::Sentence && options.hit_cuts.is_empty() {
        return Err(Error::config("sentence evaluation needs at least one K cutoff"));
    }

    let depth = engine.doc_count().max(1);
    let mut rows = Vec::with_capacity(queries.len());
    for q in queries {
        let result = engine.search(&q.text, depth)?;
        let retrieved: Vec<String> = result.hits.into_iter().map(|h| h.id).collect();
        let row = match kind {
            QueryKind::ExactKeyword | QueryKind::RelaxedKeyword => {
                let (precision, recall, f1) = prf_at_k(&retrieved, &q.gold_ids, options.prf_k)?;
                EvalRow {
                    query: q.text.clone(),
                    retrieved,
                    gold: q.gold_ids.clone(),
                    prf: Some(PrfRow { precision, recall, f1 }),
                    hits: None,
                }
            }
            QueryKind::Sentence => {
                let hits = options
                    .hit_cuts
                    .iter()
                    .map(|cut| {
                        Ok(CutHit {
                            cut: cut.label(),
                            hit: hits_at_k(&retrieved, &q.gold_ids, *cut)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                EvalRow {
                    query: q.text.clone(),
                    retrieved,
                    gold: q.gold_ids.clone(),
                    prf: None,
                    hits: Some(hits),
                }
            }
        };
        rows.push(row);
    }

    let n = rows.len() as f64;
    let aggregates = match kind {
        QueryKind::ExactKeyword | QueryKind::RelaxedKeyword => {
            let mut p = 0.0;
            let mut r = 0.0;
            let mut f = 0.0;
            for row in &rows {
                let m = row.prf.as_ref().expect("keyword rows carry prf");
                p += m.precision;
                r += m.recall;
                f += m.f1;
            }
            Aggregates::Keyword { precision: pct(p / n), recall: pct(r / n), f1: pct(f / n) }
        }
        QueryKind::Sentence => {
            let hits = options
                .hit_cuts
                .iter()
                .enumerate()
                .map(|(i, cut)| {
                    let hit_count = rows
                        .iter()
                        .filter(|row| row.hits.as_ref().expect("sentence rows carry hits")[i].hit)
                        .count() as f64;
                    CutValue { cut: cut.label(), percent: pct(hit_count / n) }
                })
                .collect();
            Aggregates::Sentence { hits }
        }
    };

    Ok(EvalReport {
        engine: engine.name().to_string(),
        kind: kind.to_string(),
        query_count: rows.len(),
        aggregates,
        rows,
        catalog_fingerprint: options.catalog_fingerprint.clone(),
        model_fingerprint: options.model_fingerprint.clone(),
    })
}

/// Render reports as aligned text tables, one table per metric family.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut out = String::new();

    let keyword: Vec<&EvalReport> =
        reports.iter().filter(|r| matches!(r.aggregates, Aggregates::Keyword { .. })).collect();
    if !keyword.is_empty() {
        let mut table = vec!["engine | kind | queries | P | R | F1".to_string()];
        for r in &keyword {
            let Aggregates::Keyword { precision, recall, f1 } = &r.aggregates else {
                unreachable!()
            };
            table.push(format!(
                "{} | {} | {} | {precision:.1} | {recall:.1} | {f1:.1}",
                r.engine, r.kind, r.query_count
            ));
        }
        push_aligned(&mut out, &table);
    }

    let sentence: Vec<&EvalReport> =
        reports.iter().filter(|r| matches!(r.aggregates, Aggregates::Sentence { .. })).collect();
    if !sentence.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let Aggregates::Sentence { hits: first_hits } = &sentence[0].aggregates else {
            unreachable!()
        };
        let mut header = "engine | kind | queries".to_string();
        for cv in first_hits {
            write!(header, " | H{}", cv.cut).expect("string write");
        }
        let mut table = vec![header];
        for r in &sentence {
            let Aggregates::Sentence { hits } = &r.aggregates else { unreachable!() };
            let mut line = format!("{} | {} | {}", r.engine, r.kind, r.query_count);
            for cv in hits {
                write!(line, " | {:.1}", cv.percent).expect("string write");
            }
            table.push(line);
        }
        push_aligned(&mut out, &table);
    }

    out
}

/// Pad `|`-separated cells so columns line up, then append to `out`.
fn push_aligned(out: &mut String, lines: &[String]) {
    let rows: Vec<Vec<&str>> =
        lines.iter().map(|l| l.split('|').map(|c| c.trim()).collect()).collect();
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    for row in &rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            let pad = widths[i] - cell.chars().count();
            line.push_str(cell);
            for _ in 0..pad {
                line.push(' ');
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}
