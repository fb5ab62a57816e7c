//! Lexical retrieval baselines: term-match full-text search and BM25.
//!
//! Both engines operate on the same inverted index over each entry's index
//! text and hint. Neither stems nor expands synonyms, and both score bags
//! of words, so they share the failure modes the neural engine is meant to
//! fix: synonym misses and compound-noun order blindness.

use crate::catalog::FeatureCatalog;
use crate::error::{Error, Result};
use crate::index::{SearchHit, SearchResult};
use std::collections::{BTreeMap, HashMap};

pub const DEFAULT_BM25_K1: f64 = 1.2;
pub const DEFAULT_BM25_B: f64 = 0.75;

/// Lowercased alphanumeric runs; everything else separates terms.
pub fn lexical_terms(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn unique_terms(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for t in lexical_terms(text) {
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen
}

struct DocEntry {
    id: String,
    /// Term frequency within this document.
    term_counts: HashMap<String, u32>,
    /// Total term occurrences (document length for BM25).
    len: u32,
}

/// Inverted index over catalog index texts and hints.
pub struct LexicalIndex {
    docs: Vec<DocEntry>,
    /// term → number of documents containing it. BTreeMap keeps iteration
    /// deterministic for debugging and stats.
    doc_freq: BTreeMap<String, u32>,
    avg_doc_len: f64,
}

impl LexicalIndex {
    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// Number of documents containing `term` (after lowercasing).
    pub fn doc_frequency(&self, term: &str) -> u32 {
        self.doc_freq.get(&term.to_lowercase()).copied().unwrap_or(0)
    }

    /// Total postings (sum of distinct-term counts over documents).
    pub fn posting_count(&self) -> u64 {
        self.doc_freq.values().map(|&df| df as u64).sum()
    }
}

/// Index every entry's index text plus hint.
pub fn build_lexical_index(catalog: &FeatureCatalog) -> LexicalIndex {
    let mut docs = Vec::with_capacity(catalog.len());
    let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
    let mut total_len = 0u64;
    for entry in catalog.entries() {
        let mut text = entry.index_text();
        if let Some(hint) = &entry.hint {
            text.push(' ');
            text.push_str(hint);
        }
        let terms = lexical_terms(&text);
        let mut term_counts: HashMap<String, u32> = HashMap::new();
        for t in &terms {
            *term_counts.entry(t.clone()).or_insert(0) += 1;
        }
        for t in term_counts.keys() {
            *doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
        total_len += terms.len() as u64;
        docs.push(DocEntry { id: entry.id.clone(), term_counts, len: terms.len() as u32 });
    }
    let avg_doc_len = if docs.is_empty() { 0.0 } else { total_len as f64 / docs.len() as f64 };
    LexicalIndex { docs, doc_freq, avg_doc_len }
}

fn ranked_result(
    query: &str,
    k: usize,
    mut scored: Vec<SearchHit>,
) -> SearchResult {
    scored.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).expect("finite scores").then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    SearchResult { query: query.to_string(), hits: scored }
}

fn validate_query(query: &str, k: usize) -> Result<()> {
    if query.trim().is_empty() {
        return Err(Error::config("query must not be empty; provide a feature name or sentence"));
    }
    if k < 1 {
        return Err(Error::config("top-K must be at least 1"));
    }
    Ok(())
}

/// Term-match search: score = number of distinct query terms the document
/// contains; zero-match documents are excluded.
pub fn fts_search(index: &LexicalIndex, query: &str, k: usize) -> Result<SearchResult> {
    validate_query(query, k)?;
    let terms = unique_terms(query);
    let mut scored = Vec::new();
    for doc in &index.docs {
        let matched = terms.iter().filter(|t| doc.term_counts.contains_key(*t)).count();
        if matched > 0 {
            scored.push(SearchHit { id: doc.id.clone(), score: matched as f64 });
        }
    }
    Ok(ranked_result(query, k, scored))
}

/// BM25 with the standard defaults (`k1 = 1.2`, `b = 0.75`).
pub fn bm25_search(index: &LexicalIndex, query: &str, k: usize) -> Result<SearchResult> {
    bm25_search_with(index, query, k, DEFAULT_BM25_K1, DEFAULT_BM25_B)
}

/// BM25 scoring over distinct query terms. The IDF term is floored at 0 so
/// terms present in most documents cannot produce negative scores.
pub fn bm25_search_with(
    index: &LexicalIndex,
    query: &str,
    k: usize,
    k1: f64,
    b: f64,
) -> Result<SearchResult> {
    validate_query(query, k)?;
    if k1 < 0.0 || !(0.0..=1.0).contains(&b) {
        return Err(Error::config(format!("BM25 parameters out of range: k1={k1}, b={b}")));
    }
    let n = index.docs.len() as f64;
    let terms = unique_terms(query);
    let mut scored = Vec::new();
    for doc in &index.docs {
        let mut score = 0.0;
        let mut any = false;
        for t in &terms {
            let tf = doc.term_counts.get(t).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            any = true;
            let df = index.doc_freq.get(t).copied().unwrap_or(0) as f64;
            let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
            let norm = 1.0 - b + b * (doc.len as f64 / index.avg_doc_len);
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * norm);
        }
        if any {
            scored.push(SearchHit { id: doc.id.clone(), score });
        }
    }
    Ok(ranked_result(query, k, scored))
}
