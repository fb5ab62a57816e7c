//! Byte-level byte-pair-encoding tokenizer.
//!
//! Texts are lowercased and split into raw UTF-8 bytes, so every input maps
//! to token ids without an out-of-vocabulary path; merges learned from the
//! training corpus compress frequent byte pairs into longer subwords. The
//! same code handles any language the corpus contains.

use crate::error::{read_file_string, write_file_bytes, Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Fixed special tokens preceding the 256 byte tokens.
pub const NUM_SPECIALS: u32 = 5;

/// First id after the specials and byte tokens; merges start here.
pub const BASE_VOCAB_SIZE: u32 = NUM_SPECIALS + 256;

const VOCAB_HEADER_PREFIX: &str = "fsk-vocab v1 size=";

/// Immutable tokenizer vocabulary: 5 specials, 256 byte tokens, and an
/// ordered list of learned merges. A token's id is its position in this
/// layout, so the token/id mapping is bijective by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    /// Byte content of each learned token, indexed by `id - BASE_VOCAB_SIZE`.
    merged_tokens: Vec<Vec<u8>>,
    /// Each rule pairs two existing token ids; the merged token's bytes are
    /// the concatenation of both sides.
    merges: Vec<(u32, u32)>,
}

impl Vocab {
    /// Total number of token ids, specials included.
    pub fn size(&self) -> u32 {
        BASE_VOCAB_SIZE + self.merges.len() as u32
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// Byte content of a non-special token id.
    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        if id < NUM_SPECIALS {
            return Err(Error::validation(format!("token id {id} is a special token")));
        }
        if id < BASE_VOCAB_SIZE {
            let b = (id - NUM_SPECIALS) as usize;
            return Ok(&BYTE_TABLE[b..b + 1]);
        }
        self.merged_tokens
            .get((id - BASE_VOCAB_SIZE) as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::validation(format!("token id {id} out of range")))
    }
}

static BYTE_TABLE: [u8; 256] = {
    let mut t = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = i as u8;
        i += 1;
    }
    t
};

/// Token ids plus an attention mask that is 1 exactly on non-PAD positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSeq {
    /// Number of non-PAD positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

fn text_to_byte_ids(text: &str) -> Vec<u32> {
    text.to_lowercase().bytes().map(|b| b as u32 + NUM_SPECIALS).collect()
}

/// Replace non-overlapping occurrences of `(left, right)` left to right.
fn apply_merge(seq: &mut Vec<u32>, left: u32, right: u32, new_id: u32) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    *seq = out;
}

/// Learn a vocabulary by greedy byte-pair merging over `texts`.
///
/// Merging stops at `target_size` total tokens or once no adjacent pair
/// occurs at least twice. Ties on pair frequency go to the pair seen
/// earliest in a left-to-right scan of the corpus, which keeps the result
/// independent of hash-map iteration order.
pub fn build_vocab(texts: &[&str], target_size: u32) -> Result<Vocab> {
    if texts.is_empty() {
        return Err(Error::config("vocabulary corpus is empty"));
    }
    if target_size < BASE_VOCAB_SIZE {
        return Err(Error::config(format!(
            "target vocab size {target_size} is below the floor of {BASE_VOCAB_SIZE} \
             (5 specials + 256 byte tokens)"
        )));
    }

    let mut corpus: Vec<Vec<u32>> = texts.iter().map(|t| text_to_byte_ids(t)).collect();
    let mut merged_tokens: Vec<Vec<u8>> = Vec::new();
    let mut merges: Vec<(u32, u32)> = Vec::new();

    while BASE_VOCAB_SIZE + (merges.len() as u32) < target_size {
        let mut counts: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        let mut next_rank = 0usize;
        for seq in &corpus {
            for w in seq.windows(2) {
                let entry = counts.entry((w[0], w[1])).or_insert_with(|| {
                    let rank = next_rank;
                    next_rank += 1;
                    (0, rank)
                });
                entry.0 += 1;
            }
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(&pair, &(count, _))| (pair, count));
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }

        let new_id = BASE_VOCAB_SIZE + merges.len() as u32;
        let side_bytes = |id: u32, merged: &[Vec<u8>]| -> Vec<u8> {
            if id < BASE_VOCAB_SIZE {
                vec![(id - NUM_SPECIALS) as u8]
            } else {
                merged[(id - BASE_VOCAB_SIZE) as usize].clone()
            }
        };
        let mut bytes = side_bytes(left, &merged_tokens);
        bytes.extend_from_slice(&side_bytes(right, &merged_tokens));
        merged_tokens.push(bytes);
        merges.push((left, right));
        for seq in &mut corpus {
            apply_merge(seq, left, right, new_id);
        }
    }

    Ok(Vocab { merged_tokens, merges })
}

/// Tokenize `text` into `CLS + subwords + SEP`, truncated to `max_len` with
/// SEP as the last kept token, then PAD-filled to exactly `max_len`.
pub fn encode(vocab: &Vocab, text: &str, max_len: usize) -> TokenSeq {
    assert!(max_len >= 3, "max_len must be at least 3 (CLS + token + SEP)");
    let mut ids = text_to_byte_ids(text);
    for (rule_index, &(left, right)) in vocab.merges.iter().enumerate() {
        apply_merge(&mut ids, left, right, BASE_VOCAB_SIZE + rule_index as u32);
    }
    ids.truncate(max_len - 2);

    let mut out = Vec::with_capacity(max_len);
    out.push(CLS_ID);
    out.extend_from_slice(&ids);
    out.push(SEP_ID);
    let active = out.len();
    out.resize(max_len, PAD_ID);

    let mut mask = vec![1u8; active];
    mask.resize(max_len, 0);
    TokenSeq { ids: out, attention_mask: mask }
}

/// Inverse of [`encode`] up to lowercasing: special tokens are dropped and
/// the remaining token bytes are concatenated.
pub fn decode(vocab: &Vocab, ids: &[u32]) -> Result<String> {
    let mut bytes = Vec::new();
    for &id in ids {
        if id >= vocab.size() {
            return Err(Error::validation(format!(
                "token id {id} out of range for vocab of size {}",
                vocab.size()
            )));
        }
        if Vocab::is_special(id) {
            continue;
        }
        bytes.extend_from_slice(vocab.token_bytes(id)?);
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Canonical text form of a vocabulary: a header line, then one merge rule
/// per line with both sides' token bytes hex-encoded. This is both the file
/// format and the representation hashed into model fingerprints.
pub fn vocab_to_text(vocab: &Vocab) -> String {
    let mut out = String::new();
    writeln!(out, "{}{}", VOCAB_HEADER_PREFIX, vocab.size()).expect("string write");
    for &(left, right) in &vocab.merges {
        let lhex = hex_encode(vocab.token_bytes(left).expect("merge ids valid by construction"));
        let rhex = hex_encode(vocab.token_bytes(right).expect("merge ids valid by construction"));
        writeln!(out, "{lhex} {rhex}").expect("string write");
    }
    out
}

/// Write the canonical text form to a file.
pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    write_file_bytes(path, vocab_to_text(vocab).as_bytes())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let text = read_file_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(format!("{}: empty vocab file", path.display())))?;
    let declared: u32 = header
        .strip_prefix(VOCAB_HEADER_PREFIX)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| {
            Error::format(format!("{}: unrecognized vocab header {header:?}", path.display()))
        })?;

    let mut bytes_to_id: HashMap<Vec<u8>, u32> = HashMap::new();
    for b in 0u32..256 {
        bytes_to_id.insert(vec![b as u8], NUM_SPECIALS + b);
    }
    let mut merged_tokens: Vec<Vec<u8>> = Vec::new();
    let mut merges: Vec<(u32, u32)> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (lhex, rhex) = line.split_once(' ').ok_or_else(|| {
            Error::format(format!("{}: line {}: expected two fields", path.display(), line_no + 2))
        })?;
        let left_bytes = hex_decode(lhex).ok_or_else(|| {
            Error::format(format!("{}: line {}: bad hex {lhex:?}", path.display(), line_no + 2))
        })?;
        let right_bytes = hex_decode(rhex).ok_or_else(|| {
            Error::format(format!("{}: line {}: bad hex {rhex:?}", path.display(), line_no + 2))
        })?;
        let left = *bytes_to_id.get(&left_bytes).ok_or_else(|| {
            Error::format(format!(
                "{}: line {}: merge side not yet defined",
                path.display(),
                line_no + 2
            ))
        })?;
        let right = *bytes_to_id.get(&right_bytes).ok_or_else(|| {
            Error::format(format!(
                "{}: line {}: merge side not yet defined",
                path.display(),
                line_no + 2
            ))
        })?;
        let mut joined = left_bytes;
        joined.extend_from_slice(&right_bytes);
        let new_id = BASE_VOCAB_SIZE + merges.len() as u32;
        bytes_to_id.insert(joined.clone(), new_id);
        merged_tokens.push(joined);
        merges.push((left, right));
    }

    let vocab = Vocab { merged_tokens, merges };
    if vocab.size() != declared {
        return Err(Error::format(format!(
            "{}: header declares size {declared} but file defines {}",
            path.display(),
            vocab.size()
        )));
    }
    Ok(vocab)
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("string write");
    }
    s
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.is_empty() || s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn repeated_byte_text_learns_exactly_one_merge() {
        let vocab = build_vocab(&["aaaa"], 262).unwrap();
        assert_eq!(vocab.merges().len(), 1);
        let a = b'a' as u32 + NUM_SPECIALS;
        assert_eq!(vocab.merges()[0], (a, a));
        assert_eq!(vocab.token_bytes(BASE_VOCAB_SIZE).unwrap(), b"aa");
    }

    #[test]
    fn merging_stops_when_no_pair_repeats() {
        // After ("a","a") the corpus is [aa, aa]; that pair occurs once, so
        // a larger budget must not force further merges.
        let vocab = build_vocab(&["aaaa"], 300).unwrap();
        assert_eq!(vocab.merges().len(), 1);
    }

    #[test]
    fn target_size_below_floor_is_a_config_error() {
        let err = build_vocab(&["abc"], 260).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn build_is_deterministic() {
        let texts = ["touch sensitivity", "eye comfort shield", "display display"];
        let a = build_vocab(&texts, 280).unwrap();
        let b = build_vocab(&texts, 280).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_string_encodes_to_cls_sep_padding() {
        let vocab = build_vocab(&["ab"], 261).unwrap();
        let seq = encode(&vocab, "", 8);
        assert_eq!(seq.ids, vec![CLS_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.attention_mask, vec![1, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn long_input_truncates_with_sep_last() {
        let vocab = build_vocab(&["z"], 261).unwrap();
        let long: String = "the quick brown fox jumps over the lazy dog ".repeat(20);
        let seq = encode(&vocab, &long, 16);
        assert_eq!(seq.ids.len(), 16);
        assert_eq!(seq.attention_mask.len(), 16);
        assert_eq!(seq.active_len(), 16);
        assert_eq!(seq.ids[0], CLS_ID);
        assert_eq!(*seq.ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn round_trips_lowercased_text() {
        let corpus = ["display touch sensitivity", "eye comfort shield"];
        let vocab = build_vocab(&corpus, 300).unwrap();
        for text in ["Touch Sensitivity", "Blue LIGHT filter", "눈 편하게 보기"] {
            let seq = encode(&vocab, text, 64);
            let back = decode(&vocab, &seq.ids).unwrap();
            assert_eq!(back, text.to_lowercase());
        }
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let vocab = build_vocab(&["ab"], 261).unwrap();
        let err = decode(&vocab, &[CLS_ID, vocab.size(), SEP_ID]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let corpus = ["notification sound settings", "sound notifications"];
        let vocab = build_vocab(&corpus, 290).unwrap();
        save_vocab(&vocab, &path).unwrap();
        let loaded = load_vocab(&path).unwrap();
        assert_eq!(loaded, vocab);
    }

    #[test]
    fn save_is_byte_identical_across_runs() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        let corpus = ["wi-fi calling", "wi-fi direct"];
        save_vocab(&build_vocab(&corpus, 280).unwrap(), &a).unwrap();
        save_vocab(&build_vocab(&corpus, 280).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn load_rejects_undefined_merge_side() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        // "xy" was never defined by an earlier rule.
        std::fs::write(&path, "fsk-vocab v1 size=262\n7879 61\n").unwrap();
        let err = load_vocab(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn load_rejects_size_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "fsk-vocab v1 size=500\n61 61\n").unwrap();
        let err = load_vocab(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn missing_vocab_file_is_a_config_error() {
        let err = load_vocab(Path::new("/nonexistent/vocab.txt")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    proptest! {
        #[test]
        fn never_emits_unk(text in ".{0,60}") {
            let vocab = build_vocab(&["some training text"], 270).unwrap();
            let seq = encode(&vocab, &text, 64);
            prop_assert!(seq.ids.iter().all(|&id| id != UNK_ID));
        }

        #[test]
        fn round_trip_holds_for_short_inputs(text in "[a-z0-9 ]{0,40}") {
            let vocab = build_vocab(&["a corpus with letters and spaces 0123456789"], 290).unwrap();
            let seq = encode(&vocab, &text, 64);
            let back = decode(&vocab, &seq.ids).unwrap();
            prop_assert_eq!(back, text.to_lowercase());
        }

        #[test]
        fn mask_marks_exactly_non_pad(text in ".{0,30}") {
            let vocab = build_vocab(&["abc def"], 265).unwrap();
            let seq = encode(&vocab, &text, 32);
            prop_assert_eq!(seq.ids.len(), 32);
            for (id, m) in seq.ids.iter().zip(seq.attention_mask.iter()) {
                prop_assert_eq!(*m == 1, *id != PAD_ID);
            }
            prop_assert_eq!(seq.ids[0], CLS_ID);
        }
    }
}
