//! Precomputed embedding index with exact cosine top-K search.
//!
//! Catalog entries are embedded once, L2-normalized, and stored as matrix
//! rows, so a query costs one encoder pass plus a dot product per entry.
//! Search is an exhaustive scan: at catalog scale (hundreds of entries)
//! exactness is cheap and there is no approximation error to reason about.

use crate::catalog::FeatureCatalog;
use crate::encoder::{forward, EncoderConfig, Embedding, ModelParams};
use crate::error::{read_file_bytes, write_file_bytes, Error, Result};
use crate::fingerprint::{model_fingerprint, to_hex, Fingerprint};
use crate::math::Mat;
use crate::tokenizer::{encode, Vocab};
use std::path::Path;
use std::time::SystemTime;

const INDEX_MAGIC: &[u8; 4] = b"FSKI";
const INDEX_VERSION: u32 = 1;

/// Entries embedded per encoder call while building.
const BUILD_BATCH: usize = 32;

/// Tolerance around 1.0 for stored row norms.
const ROW_NORM_TOL: f32 = 1e-4;

/// Default number of results returned by search.
pub const DEFAULT_TOP_K: usize = 5;

/// Immutable catalog embedding store.
#[derive(Debug)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    /// `N × D`, one unit-normalized row per catalog entry, same order as `ids`.
    matrix: Mat<f32>,
    config_fingerprint: Fingerprint,
    /// Informational only; never serialized, so builds stay reproducible.
    built_at: Option<SystemTime>,
}

/// One scored result row.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchHit {
    pub id: String,
    /// Cosine similarity for the neural engine; engine-specific relevance
    /// for the lexical baselines.
    pub score: f64,
}

/// Ranked search output.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub query: String,
    /// Non-increasing by score; ties ordered by ascending feature id.
    pub hits: Vec<SearchHit>,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.config_fingerprint
    }

    pub fn built_at(&self) -> Option<SystemTime> {
        self.built_at
    }

    /// Errors with a staleness message unless `config` and `vocab` are the
    /// exact pair this index was built from.
    pub fn check_compatible(&self, config: &EncoderConfig, vocab: &Vocab) -> Result<()> {
        let current = model_fingerprint(config, vocab);
        if current != self.config_fingerprint {
            return Err(Error::stale(format!(
                "index fingerprint {} does not match the supplied model/vocab fingerprint {}; \
                 rebuild the index",
                to_hex(&self.config_fingerprint),
                to_hex(&current)
            )));
        }
        Ok(())
    }

    /// Full ranking of every indexed entry against a normalized query
    /// embedding: descending score, ties by ascending id (= row order).
    pub fn rank(&self, query: &Embedding) -> Vec<SearchHit> {
        assert!(query.normalized, "rank expects a normalized query embedding");
        assert_eq!(query.dim(), self.dim(), "query dimension mismatch");
        let mut hits: Vec<SearchHit> = self
            .ids
            .iter()
            .enumerate()
            .map(|(row, id)| {
                let score: f32 = self
                    .matrix
                    .row(row)
                    .iter()
                    .zip(query.values.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                SearchHit { id: id.clone(), score: score as f64 }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score.partial_cmp(&a.score).expect("finite scores").then_with(|| a.id.cmp(&b.id))
        });
        hits
    }
}

/// Embed every catalog entry's index text and store the normalized rows.
pub fn build_index(
    params: &ModelParams<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    catalog: &FeatureCatalog,
) -> Result<EmbeddingIndex> {
    if catalog.is_empty() {
        return Err(Error::validation("cannot build an index over an empty catalog"));
    }
    let max_len = config.max_seq_len as usize;
    let mut matrix = Mat::zeros(catalog.len(), config.hidden as usize);
    let mut ids = Vec::with_capacity(catalog.len());

    for (chunk_start, chunk) in catalog.entries().chunks(BUILD_BATCH).enumerate().map(|(i, c)| (i * BUILD_BATCH, c)) {
        let batch: Vec<_> =
            chunk.iter().map(|e| encode(vocab, &e.index_text(), max_len)).collect();
        let embeddings = forward(params, config, &batch)?;
        for (offset, (entry, emb)) in chunk.iter().zip(embeddings).enumerate() {
            let normalized = emb.normalize();
            matrix.row_mut(chunk_start + offset).copy_from_slice(&normalized.values);
            ids.push(entry.id.clone());
        }
    }

    Ok(EmbeddingIndex {
        ids,
        matrix,
        config_fingerprint: model_fingerprint(config, vocab),
        built_at: Some(SystemTime::now()),
    })
}

/// Embed `query` and return the top-`k` entries by cosine similarity,
/// dropping any hit scoring below `threshold` when one is given.
pub fn search(
    index: &EmbeddingIndex,
    params: &ModelParams<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    query: &str,
    k: usize,
    threshold: Option<f64>,
) -> Result<SearchResult> {
    index.check_compatible(config, vocab)?;
    if query.trim().is_empty() {
        return Err(Error::config("query must not be empty; provide a feature name or sentence"));
    }
    if k < 1 {
        return Err(Error::config("top-K must be at least 1"));
    }
    if let Some(t) = threshold {
        if !(-1.0..=1.0).contains(&t) {
            return Err(Error::config(format!("threshold {t} outside the cosine range [-1, 1]")));
        }
    }

    let seq = encode(vocab, query, config.max_seq_len as usize);
    let emb = forward(params, config, &[seq])?.remove(0).normalize();
    let mut hits = index.rank(&emb);
    hits.truncate(k);
    if let Some(t) = threshold {
        hits.retain(|h| h.score >= t);
    }
    Ok(SearchResult { query: query.to_string(), hits })
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Write the index as a little-endian binary file. The layout is fully
/// deterministic: rebuilding from identical inputs gives identical bytes.
pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    push_u32(&mut buf, INDEX_VERSION);
    buf.extend_from_slice(&index.config_fingerprint);
    push_u32(&mut buf, index.ids.len() as u32);
    push_u32(&mut buf, index.dim() as u32);
    for id in &index.ids {
        push_u32(&mut buf, id.len() as u32);
        buf.extend_from_slice(id.as_bytes());
    }
    for &v in index.matrix.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file_bytes(path, &buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(Error::format(format!("{}: truncated index file", self.path.display()))),
        }
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Read an index back, re-verifying structure and row norms.
pub fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let bytes = read_file_bytes(path)?;
    let mut r = Reader { bytes: &bytes, offset: 0, path };
    if r.take(4)? != INDEX_MAGIC {
        return Err(Error::format(format!("{}: not an embedding index (bad magic)", path.display())));
    }
    let version = r.take_u32()?;
    if version != INDEX_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported index version {version}",
            path.display()
        )));
    }
    let config_fingerprint: Fingerprint = r.take(32)?.try_into().expect("32 bytes");
    let n = r.take_u32()? as usize;
    let d = r.take_u32()? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(format!("{}: empty index dimensions", path.display())));
    }

    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.take_u32()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(format!("{}: id is not valid UTF-8", path.display())))?
            .to_string();
        ids.push(id);
    }
    for pair in ids.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::format(format!(
                "{}: ids out of order ({:?} before {:?})",
                path.display(),
                pair[0],
                pair[1]
            )));
        }
    }

    let mut matrix = Mat::zeros(n, d);
    for slot in matrix.data_mut() {
        *slot = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    }
    if r.offset != bytes.len() {
        return Err(Error::format(format!(
            "{}: {} trailing bytes after index payload",
            path.display(),
            bytes.len() - r.offset
        )));
    }
    for row in 0..n {
        let norm: f32 = matrix.row(row).iter().map(|v| v * v).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > ROW_NORM_TOL {
            return Err(Error::format(format!(
                "{}: row {row} has norm {norm}, expected 1.0",
                path.display()
            )));
        }
    }

    let built_at = std::fs::metadata(path).and_then(|m| m.modified()).ok();
    Ok(EmbeddingIndex { ids, matrix, config_fingerprint, built_at })
}

/// Assemble an index directly from precomputed rows. Rows must already be
/// unit-normalized and ordered by ascending id; used by tests and the
/// distillation pipeline which re-embeds with a student model.
pub fn index_from_rows(
    ids: Vec<String>,
    matrix: Mat<f32>,
    config_fingerprint: Fingerprint,
) -> Result<EmbeddingIndex> {
    if ids.len() != matrix.rows() {
        return Err(Error::validation("id count does not match row count"));
    }
    for pair in ids.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::validation(format!(
                "ids must be strictly ascending ({:?} before {:?})",
                pair[0], pair[1]
            )));
        }
    }
    for row in 0..matrix.rows() {
        let norm: f32 = matrix.row(row).iter().map(|v| v * v).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > ROW_NORM_TOL {
            return Err(Error::validation(format!("row {row} has norm {norm}, expected 1.0")));
        }
    }
    Ok(EmbeddingIndex {
        ids,
        matrix,
        config_fingerprint,
        built_at: Some(SystemTime::now()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::encoder::init_params;
    use crate::tokenizer::build_vocab;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn setup() -> (ModelParams<f32>, EncoderConfig, Vocab, FeatureCatalog) {
        let catalog = parse_catalog(
            r#"{"version":"1","entries":[
                {"id":"display.brightness","path":["Display","Brightness"]},
                {"id":"display.touch","path":["Display","Touch sensitivity"]},
                {"id":"sounds.volume","path":["Sounds and vibration","Volume"]}
            ]}"#,
        )
        .unwrap();
        let texts: Vec<String> = catalog.entries().iter().map(|e| e.index_text()).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let vocab = build_vocab(&refs, 280).unwrap();
        let config = EncoderConfig {
            layers: 1,
            hidden: 16,
            heads: 2,
            ffn_dim: 32,
            vocab_size: vocab.size(),
            max_seq_len: 32,
        };
        let params = init_params(&config, 42).unwrap();
        (params, config, vocab, catalog)
    }

    #[test]
    fn build_produces_sorted_unit_rows() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        assert_eq!(index.len(), 3);
        let mut sorted = index.ids().to_vec();
        sorted.sort();
        assert_eq!(index.ids(), sorted.as_slice());
        for row in 0..index.len() {
            let norm: f32 = index.matrix.row(row).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_catalog_is_rejected() {
        let (params, config, vocab, _) = setup();
        let empty = parse_catalog(r#"{"version":"1","entries":[]}"#).unwrap();
        let err = build_index(&params, &config, &vocab, &empty).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let (params, config, vocab, catalog) = setup();
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.fski");
        let b = dir.path().join("b.fski");
        save_index(&build_index(&params, &config, &vocab, &catalog).unwrap(), &a).unwrap();
        save_index(&build_index(&params, &config, &vocab, &catalog).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn entry_order_in_the_source_file_does_not_matter() {
        let (params, config, vocab, catalog) = setup();
        let shuffled = parse_catalog(
            r#"{"version":"1","entries":[
                {"id":"sounds.volume","path":["Sounds and vibration","Volume"]},
                {"id":"display.touch","path":["Display","Touch sensitivity"]},
                {"id":"display.brightness","path":["Display","Brightness"]}
            ]}"#,
        )
        .unwrap();
        let a = build_index(&params, &config, &vocab, &catalog).unwrap();
        let b = build_index(&params, &config, &vocab, &shuffled).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn own_document_text_ranks_first() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let result =
            search(&index, &params, &config, &vocab, "Display - Touch sensitivity", 3, None)
                .unwrap();
        assert_eq!(result.hits[0].id, "display.touch");
        assert!(result.hits[0].score > 0.999);
    }

    #[test]
    fn k_larger_than_catalog_clamps() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let result = search(&index, &params, &config, &vocab, "volume", 50, None).unwrap();
        assert_eq!(result.hits.len(), 3);
    }

    #[test]
    fn scores_are_non_increasing_cosines() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let result = search(&index, &params, &config, &vocab, "touch", 3, None).unwrap();
        for pair in result.hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
        for hit in &result.hits {
            assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&hit.score));
        }
    }

    #[test]
    fn empty_query_is_rejected() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let err = search(&index, &params, &config, &vocab, "   ", 5, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let err = search(&index, &params, &config, &vocab, "touch", 5, Some(1.5)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn threshold_drops_low_scores_without_reordering() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let all = search(&index, &params, &config, &vocab, "touch", 3, None).unwrap();
        let cut = all.hits[1].score;
        let filtered =
            search(&index, &params, &config, &vocab, "touch", 3, Some(cut)).unwrap();
        let expected: Vec<_> =
            all.hits.iter().filter(|h| h.score >= cut).cloned().collect();
        assert_eq!(filtered.hits, expected);
        assert!(!filtered.hits.is_empty());
        assert!(filtered.hits.len() < all.hits.len());
    }

    #[test]
    fn search_against_foreign_vocab_is_stale() {
        let (params, config, vocab, catalog) = setup();
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        let other_vocab = build_vocab(&["a completely different corpus"], 280).unwrap();
        let err = search(&index, &params, &config, &other_vocab, "touch", 5, None).unwrap_err();
        assert!(matches!(err, Error::Stale(_)));
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let (params, config, vocab, catalog) = setup();
        let dir = tempdir().unwrap();
        let path = dir.path().join("catalog.fski");
        let index = build_index(&params, &config, &vocab, &catalog).unwrap();
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.ids(), index.ids());
        assert_eq!(loaded.matrix, index.matrix);
        assert_eq!(loaded.fingerprint(), index.fingerprint());

        let again = dir.path().join("again.fski");
        save_index(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn truncated_index_is_rejected() {
        let (params, config, vocab, catalog) = setup();
        let dir = tempdir().unwrap();
        let path = dir.path().join("catalog.fski");
        save_index(&build_index(&params, &config, &vocab, &catalog).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_index(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn denormalized_rows_are_rejected_at_load() {
        let (params, config, vocab, catalog) = setup();
        let dir = tempdir().unwrap();
        let path = dir.path().join("catalog.fski");
        save_index(&build_index(&params, &config, &vocab, &catalog).unwrap(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let len = bytes.len();
        // Scale the final f32 (part of the last row) far away from unit norm.
        bytes[len - 4..].copy_from_slice(&8.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn ranking_is_scale_invariant_in_the_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 30;
        let d = 8;
        let mut matrix = Mat::zeros(n, d);
        for row in 0..n {
            let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            for (c, x) in v.iter().enumerate() {
                matrix.set(row, c, x / norm);
            }
        }
        let ids: Vec<String> = (0..n).map(|i| format!("feature.{i:03}")).collect();
        let index = index_from_rows(ids, matrix, [0u8; 32]).unwrap();

        let q: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let base = Embedding { values: q.clone(), normalized: false }.normalize();
        // Scaling before normalization is how a scaled query reaches rank.
        let scaled =
            Embedding { values: q.iter().map(|x| x * 3.0).collect(), normalized: false }
                .normalize();
        let ids_a: Vec<_> = index.rank(&base).into_iter().map(|h| h.id).collect();
        let ids_b: Vec<_> = index.rank(&scaled).into_iter().map(|h| h.id).collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn rank_breaks_ties_by_ascending_id() {
        let d = 4;
        let mut matrix = Mat::zeros(3, d);
        // Two identical rows (tie) and one orthogonal row.
        matrix.row_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        matrix.row_mut(1).copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        matrix.row_mut(2).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let ids = vec!["a.first".to_string(), "b.middle".to_string(), "c.last".to_string()];
        let index = index_from_rows(ids, matrix, [0u8; 32]).unwrap();
        let q = Embedding { values: vec![1.0, 0.0, 0.0, 0.0], normalized: true };
        let ranked: Vec<_> = index.rank(&q).into_iter().map(|h| h.id).collect();
        assert_eq!(ranked, ["a.first", "c.last", "b.middle"]);
    }
}
