//! Bundled sample data: a 40-feature settings catalog with exact-keyword,
//! relaxed-keyword, and sentence querysets over it.
//!
//! The files are embedded so trained demos and tests need no external
//! data. Entry hints mirror on-device subtitles; descriptions phrase each
//! feature the way a person would ask for it, and the sentence queryset
//! wraps those phrasings in question templates.

use crate::catalog::{parse_catalog, parse_queryset, FeatureCatalog, QueryRecord};

pub const CATALOG_JSON: &str = include_str!("../fixtures/catalog.json");
pub const EXACT_QUERIES_JSONL: &str = include_str!("../fixtures/queries_exact.jsonl");
pub const RELAXED_QUERIES_JSONL: &str = include_str!("../fixtures/queries_relaxed.jsonl");
pub const SENTENCE_QUERIES_JSONL: &str = include_str!("../fixtures/queries_sentence.jsonl");

/// The bundled catalog.
pub fn bundled_catalog() -> FeatureCatalog {
    parse_catalog(CATALOG_JSON).expect("bundled catalog is valid")
}

/// Exact-name queries, one per catalog entry.
pub fn exact_queries(catalog: &FeatureCatalog) -> Vec<QueryRecord> {
    parse_queryset(EXACT_QUERIES_JSONL, catalog).expect("bundled exact queryset is valid")
}

/// Alternative-keyword queries.
pub fn relaxed_queries(catalog: &FeatureCatalog) -> Vec<QueryRecord> {
    parse_queryset(RELAXED_QUERIES_JSONL, catalog).expect("bundled relaxed queryset is valid")
}

/// Natural-language queries, two per catalog entry.
pub fn sentence_queries(catalog: &FeatureCatalog) -> Vec<QueryRecord> {
    parse_queryset(SENTENCE_QUERIES_JSONL, catalog).expect("bundled sentence queryset is valid")
}

/// Every text associated with a catalog: index texts, names, hints, and
/// descriptions. The corpus for vocabulary building, pretraining, and
/// distillation.
pub fn catalog_texts(catalog: &FeatureCatalog) -> Vec<String> {
    let mut texts = Vec::new();
    for entry in catalog.entries() {
        texts.push(entry.index_text());
        texts.push(entry.name.clone());
        if let Some(hint) = &entry.hint {
            texts.push(hint.clone());
        }
        texts.extend(entry.descriptions.iter().cloned());
    }
    texts
}
