//! Masked-language-model pretraining with dynamic masking.
//!
//! Each epoch re-samples which positions to mask: every non-special
//! position is selected with the masking probability, and a selected
//! position becomes the mask token 80% of the time, a random non-special
//! token 10%, and stays unchanged 10%. Cross-entropy is taken over the
//! selected positions through a tied-embedding output head, so pretraining
//! adds no parameters of its own.

use crate::encoder::{bind, collect_grads, seq_hidden, EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tokenizer::{encode, TokenSeq, Vocab, MASK_ID, NUM_SPECIALS};
use crate::trainers::{adam::AdamState, at_epoch, TrainReport};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Settings for pretraining.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmHyper {
    pub mask_prob: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlmHyper {
    fn default() -> Self {
        MlmHyper {
            mask_prob: 0.15,
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 42,
        }
    }
}

impl MlmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::config("mask_prob must lie strictly between 0 and 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Re-sample masking for one sequence. Returns the corrupted sequence and
/// `(active_row, original_id)` per selected position, or `None` when no
/// position was selected.
fn corrupt_sequence(
    rng: &mut ChaCha8Rng,
    seq: &TokenSeq,
    mask_prob: f64,
    vocab_size: u32,
) -> Option<(TokenSeq, Vec<(usize, u32)>)> {
    let mut ids = seq.ids.clone();
    let mut targets = Vec::new();
    let mut active_row = 0usize;
    for p in 0..ids.len() {
        if seq.attention_mask[p] == 0 {
            continue;
        }
        let row = active_row;
        active_row += 1;
        if Vocab::is_special(ids[p]) || !rng.gen_bool(mask_prob) {
            continue;
        }
        targets.push((row, ids[p]));
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            ids[p] = MASK_ID;
        } else if roll < 0.9 {
            ids[p] = rng.gen_range(NUM_SPECIALS..vocab_size);
        }
    }
    if targets.is_empty() {
        return None;
    }
    Some((TokenSeq { ids, attention_mask: seq.attention_mask.clone() }, targets))
}

/// Pretrain `params` on a text corpus.
///
/// Sequences with no selected position in an epoch contribute no loss that
/// epoch; a sequence with no maskable positions at all never contributes.
pub fn mlm_pretrain(
    mut params: ModelParams<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    corpus: &[String],
    hyper: &MlmHyper,
) -> Result<(ModelParams<f32>, TrainReport)> {
    hyper.validate()?;
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("pretraining corpus is empty"));
    }
    if config.vocab_size != vocab.size() {
        return Err(Error::config(format!(
            "vocab_size {} does not match the vocabulary ({})",
            config.vocab_size,
            vocab.size()
        )));
    }

    let start = Instant::now();
    let seqs: Vec<TokenSeq> =
        corpus.iter().map(|t| encode(vocab, t, config.max_seq_len as usize)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam: AdamState<f32> = AdamState::new_like(&params.tensors());
    let lr = hyper.learning_rate as f32;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut last_accuracy = None;

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut total = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let corrupted: Vec<(TokenSeq, Vec<(usize, u32)>)> = chunk
                .iter()
                .filter_map(|&i| {
                    corrupt_sequence(&mut rng, &seqs[i], hyper.mask_prob, config.vocab_size)
                })
                .collect();
            if corrupted.is_empty() {
                continue;
            }

            let mut tape: Tape<f32> = Tape::new();
            let bound = bind(&mut tape, &params);
            let mut masked_parts = Vec::with_capacity(corrupted.len());
            let mut target_ids = Vec::new();
            for (seq, targets) in &corrupted {
                let hidden = at_epoch(epoch, seq_hidden(&mut tape, &bound, config, seq))?;
                let rows: Vec<usize> = targets.iter().map(|&(row, _)| row).collect();
                masked_parts.push(tape.gather_rows(hidden, &rows));
                target_ids.extend(targets.iter().map(|&(_, id)| id as usize));
            }
            let masked_hidden = tape.concat_rows(&masked_parts);
            let logits = tape.matmul_nt(masked_hidden, bound.token_emb);
            let lse = tape.logsumexp_rows(logits);
            let picks: Vec<(usize, usize)> =
                target_ids.iter().enumerate().map(|(r, &id)| (r, id)).collect();
            let at_target = tape.gather_row_items(logits, &picks);
            let diff = tape.sub(lse, at_target);
            let loss = tape.mean_all(diff);
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::training(epoch, format!("non-finite loss {loss_value}")));
            }

            let logit_values = tape.value(logits).clone();
            for (r, &id) in target_ids.iter().enumerate() {
                let row = logit_values.row(r);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(c, _)| c)
                    .expect("non-empty vocabulary");
                if argmax == id {
                    correct += 1;
                }
                total += 1;
            }

            tape.backward(loss);
            let grads = collect_grads(&tape, &bound, config);
            if !grads.all_finite() {
                return Err(Error::training(epoch, "non-finite gradient"));
            }
            adam.step(lr, &mut params.tensors_mut(), &grads.tensors());
            loss_sum += loss_value as f64;
            batches += 1;
        }
        if !params.all_finite() {
            return Err(Error::training(epoch, "parameters diverged"));
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
        if total > 0 {
            last_accuracy = Some(correct as f64 / total as f64);
        }
    }

    let mut report = TrainReport::new(epoch_losses, start.elapsed().as_secs_f64(), hyper.seed);
    report.masked_accuracy = last_accuracy;
    Ok((params, report))
}
