//! Content fingerprints tying artifacts to the inputs that produced them.
//!
//! An embedding index is only meaningful with the exact model configuration
//! and vocabulary it was built from, so indexes store a fingerprint of both
//! and search refuses to run against a mismatched pair. Catalogs get their
//! own fingerprint for evaluation reports.

use crate::catalog::FeatureCatalog;
use crate::encoder::EncoderConfig;
use crate::tokenizer::{vocab_to_text, Vocab};
use sha2::{Digest, Sha256};

pub type Fingerprint = [u8; 32];

/// Hash of the encoder configuration and the vocabulary contents.
pub fn model_fingerprint(config: &EncoderConfig, vocab: &Vocab) -> Fingerprint {
    let mut h = Sha256::new();
    for word in [
        config.layers,
        config.hidden,
        config.heads,
        config.ffn_dim,
        config.vocab_size,
        config.max_seq_len,
    ] {
        h.update(word.to_le_bytes());
    }
    h.update(vocab_to_text(vocab).as_bytes());
    h.finalize().into()
}

/// Hash of a catalog's full content in its canonical (id-sorted) order.
pub fn catalog_fingerprint(catalog: &FeatureCatalog) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(catalog.version().as_bytes());
    h.update([0u8]);
    for entry in catalog.entries() {
        h.update(entry.id.as_bytes());
        h.update([0u8]);
        for seg in &entry.path {
            h.update(seg.as_bytes());
            h.update([1u8]);
        }
        if let Some(hint) = &entry.hint {
            h.update(hint.as_bytes());
        }
        h.update([2u8]);
        for d in &entry.descriptions {
            h.update(d.as_bytes());
            h.update([3u8]);
        }
        h.update([4u8]);
    }
    h.finalize().into()
}

pub fn to_hex(fp: &Fingerprint) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(64);
    for b in fp {
        write!(s, "{b:02x}").expect("string write");
    }
    s
}
