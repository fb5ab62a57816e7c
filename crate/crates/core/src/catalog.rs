//! Feature catalog and query-set ingestion.
//!
//! A catalog is a tree of device settings flattened into entries, each
//! carrying the ordered path of menu names from the root to the feature.
//! The rendered path doubles as the document string that gets embedded and
//! shown in search results. Training pairs are synthesized from each
//! entry's name, hint, and manual-style descriptions.

use crate::error::{read_file_string, Error, Result};
use serde::Deserialize;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

/// Separator between path segments in rendered index text.
pub const PATH_SEPARATOR: &str = " - ";

/// One feature in the catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureEntry {
    /// Stable identifier, unique within a catalog.
    pub id: String,
    /// Menu names from the root to the feature; never empty.
    pub path: Vec<String>,
    /// Leaf feature name; always equals the last path segment.
    pub name: String,
    /// Short description shown under the feature in a settings menu.
    pub hint: Option<String>,
    /// Longer manual-style passages about the feature.
    pub descriptions: Vec<String>,
}

impl FeatureEntry {
    /// The document string for this entry: path segments joined with
    /// [`PATH_SEPARATOR`], e.g. `"Display - Touch sensitivity"`.
    pub fn index_text(&self) -> String {
        self.path.join(PATH_SEPARATOR)
    }
}

/// Validated, id-sorted collection of features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureCatalog {
    version: String,
    entries: Vec<FeatureEntry>,
    by_id: HashMap<String, usize>,
}

/// One (anchor, positive) text pair for contrastive training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub anchor: String,
    pub positive: String,
    /// Catalog entry the pair was derived from.
    pub source_id: String,
}

/// Category of a test query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// Verbatim feature name.
    ExactKeyword,
    /// Shorter or paraphrased keywords.
    RelaxedKeyword,
    /// Full natural-language sentence.
    Sentence,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QueryKind::ExactKeyword => "exact_keyword",
            QueryKind::RelaxedKeyword => "relaxed_keyword",
            QueryKind::Sentence => "sentence",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for QueryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_keyword" => Ok(QueryKind::ExactKeyword),
            "relaxed_keyword" => Ok(QueryKind::RelaxedKeyword),
            "sentence" => Ok(QueryKind::Sentence),
            other => Err(Error::config(format!(
                "unknown query kind {other:?}; expected exact_keyword, relaxed_keyword, or sentence"
            ))),
        }
    }
}

/// One labelled test query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub text: String,
    pub kind: QueryKind,
    /// Ids of the catalog entries counted as correct; non-empty, no repeats.
    pub gold_ids: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    version: String,
    entries: Vec<CatalogEntryFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntryFile {
    id: String,
    path: Vec<String>,
    #[serde(default)]
    hint: Option<String>,
    #[serde(default)]
    descriptions: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecordFile {
    text: String,
    kind: QueryKind,
    gold_ids: Vec<String>,
}

impl FeatureCatalog {
    /// Validates and sorts entries by id.
    pub fn new(version: String, mut entries: Vec<FeatureEntry>) -> Result<Self> {
        for entry in &entries {
            validate_entry(entry)?;
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));

        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            if by_id.insert(entry.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate feature id {:?}", entry.id)));
            }
        }

        let mut seen_texts: HashMap<String, &str> = HashMap::new();
        for entry in &entries {
            if let Some(other) = seen_texts.insert(entry.index_text(), &entry.id) {
                return Err(Error::validation(format!(
                    "entries {:?} and {:?} render the same index text {:?}",
                    other,
                    entry.id,
                    entry.index_text()
                )));
            }
        }

        Ok(FeatureCatalog { version, entries, by_id })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Entries in ascending id order.
    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&FeatureEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Synthesizes contrastive training pairs.
    ///
    /// Per entry, in order: (name, hint) when a hint exists, (name, d) for
    /// each description d, then (index text, name). Pairs whose anchor
    /// equals their positive (single-segment paths) are skipped to keep the
    /// anchor/positive distinction meaningful.
    pub fn synthesize_pairs(&self) -> Vec<TrainingPair> {
        let mut pairs = Vec::new();
        for entry in &self.entries {
            let mut push = |anchor: &str, positive: &str| {
                if anchor != positive {
                    pairs.push(TrainingPair {
                        anchor: anchor.to_string(),
                        positive: positive.to_string(),
                        source_id: entry.id.clone(),
                    });
                }
            };
            if let Some(hint) = &entry.hint {
                push(&entry.name, hint);
            }
            for d in &entry.descriptions {
                push(&entry.name, d);
            }
            push(&entry.index_text(), &entry.name);
        }
        pairs
    }
}

fn validate_entry(entry: &FeatureEntry) -> Result<()> {
    let id = &entry.id;
    if id.trim().is_empty() {
        return Err(Error::validation("entry with empty id"));
    }
    if entry.path.is_empty() {
        return Err(Error::validation(format!("entry {id:?}: path is empty")));
    }
    for seg in &entry.path {
        if seg.trim().is_empty() {
            return Err(Error::validation(format!("entry {id:?}: empty path segment")));
        }
    }
    if entry.name != *entry.path.last().expect("path checked non-empty") {
        return Err(Error::validation(format!(
            "entry {id:?}: name {:?} does not equal the last path segment",
            entry.name
        )));
    }
    if let Some(hint) = &entry.hint {
        if hint.trim().is_empty() {
            return Err(Error::validation(format!("entry {id:?}: empty hint")));
        }
    }
    for d in &entry.descriptions {
        if d.trim().is_empty() {
            return Err(Error::validation(format!("entry {id:?}: empty description")));
        }
    }
    Ok(())
}

/// Loads and validates a catalog from a JSON file.
pub fn load_catalog(path: &Path) -> Result<FeatureCatalog> {
    let text = read_file_string(path)?;
    parse_catalog(&text).map_err(|e| match e {
        Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
        Error::Validation(msg) => Error::validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a catalog from JSON text; see [`load_catalog`].
pub fn parse_catalog(text: &str) -> Result<FeatureCatalog> {
    let file: CatalogFile =
        serde_json::from_str(text).map_err(|e| Error::format(format!("catalog schema: {e}")))?;
    let entries = file
        .entries
        .into_iter()
        .map(|e| {
            let name = e.path.last().cloned().unwrap_or_default();
            FeatureEntry {
                id: e.id,
                path: e.path,
                name,
                hint: e.hint,
                descriptions: e.descriptions,
            }
        })
        .collect();
    FeatureCatalog::new(file.version, entries)
}

/// Loads a JSON-lines query set and checks every gold id against `catalog`.
pub fn load_queryset(path: &Path, catalog: &FeatureCatalog) -> Result<Vec<QueryRecord>> {
    let text = read_file_string(path)?;
    parse_queryset(&text, catalog).map_err(|e| match e {
        Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
        Error::Validation(msg) => Error::validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses query records from JSON-lines text; see [`load_queryset`].
pub fn parse_queryset(text: &str, catalog: &FeatureCatalog) -> Result<Vec<QueryRecord>> {
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecordFile = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("line {}: {e}", line_no + 1)))?;
        if rec.text.trim().is_empty() {
            return Err(Error::validation(format!("line {}: empty query text", line_no + 1)));
        }
        if rec.gold_ids.is_empty() {
            return Err(Error::validation(format!(
                "line {}: query {:?} has no gold ids",
                line_no + 1,
                rec.text
            )));
        }
        let mut seen = HashSet::new();
        for id in &rec.gold_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!(
                    "line {}: query {:?} repeats gold id {id:?}",
                    line_no + 1,
                    rec.text
                )));
            }
            if catalog.get(id).is_none() {
                return Err(Error::validation(format!(
                    "line {}: query {:?} references unknown feature id {id:?}",
                    line_no + 1,
                    rec.text
                )));
            }
        }
        records.push(QueryRecord { text: rec.text, kind: rec.kind, gold_ids: rec.gold_ids });
    }
    Ok(records)
}
