//! Contrastive relevance training over (anchor, positive) text pairs.
//!
//! Each anchor is scored against its own positive plus a seeded sample of
//! other in-batch positives as negatives, softmax cross-entropy over
//! cosine similarities divided by a temperature. One shared parameter set
//! encodes both sides; pair direction alternates by epoch.

use crate::catalog::TrainingPair;
use crate::encoder::{self, EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::math::Real;
use crate::tape::{Tape, Var};
use crate::tokenizer::{encode, TokenSeq, Vocab};
use crate::trainers::{adam::AdamState, at_epoch, TrainReport};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Settings for contrastive training.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveHyper {
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ContrastiveHyper {
    fn default() -> Self {
        ContrastiveHyper {
            batch_size: 16,
            negatives_per_positive: 4,
            temperature: 0.05,
            learning_rate: 1e-3,
            epochs: 40,
            seed: 42,
        }
    }
}

impl ContrastiveHyper {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive < 1 {
            return Err(Error::config("negatives_per_positive must be at least 1"));
        }
        if self.batch_size < self.negatives_per_positive + 1 {
            return Err(Error::config(format!(
                "batch_size {} cannot supply {} distinct in-batch negatives",
                self.batch_size, self.negatives_per_positive
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive and finite"));
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

/// How many similarity terms entered a loss, split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossTermCounts {
    pub positive: usize,
    pub negative: usize,
}

/// For each anchor, pick distinct in-batch doc indices other than its own.
fn sample_negatives(rng: &mut ChaCha8Rng, batch_len: usize, per_anchor: usize) -> Vec<Vec<usize>> {
    assert!(batch_len > per_anchor, "batch cannot supply enough distinct negatives");
    (0..batch_len)
        .map(|i| {
            let mut pool: Vec<usize> = (0..batch_len).filter(|&j| j != i).collect();
            for t in 0..per_anchor {
                let pick = rng.gen_range(t..pool.len());
                pool.swap(t, pick);
            }
            pool.truncate(per_anchor);
            pool
        })
        .collect()
}

/// Build the loss node: mean over anchors of softmax cross-entropy at the
/// positive, over cosine(query, candidate)/temperature logits. `queries`
/// and `docs` are `1×D` embedding nodes; normalization happens here, so
/// callers pass unnormalized embeddings.
pub fn contrastive_loss_graph<F: Real>(
    tape: &mut Tape<F>,
    queries: &[Var],
    docs: &[Var],
    negatives: &[Vec<usize>],
    temperature: F,
) -> (Var, LossTermCounts) {
    assert_eq!(queries.len(), docs.len(), "query and doc batches must align");
    assert_eq!(queries.len(), negatives.len(), "one negative list per anchor");
    assert!(!queries.is_empty(), "empty batch");
    let inv_temp = F::one() / temperature;
    let mut counts = LossTermCounts::default();
    let mut per_anchor = Vec::with_capacity(queries.len());
    for (i, &q) in queries.iter().enumerate() {
        let mut candidates = vec![docs[i]];
        counts.positive += 1;
        for &j in &negatives[i] {
            candidates.push(docs[j]);
            counts.negative += 1;
        }
        let cands = tape.concat_rows(&candidates);
        let qn = tape.l2_normalize_rows(q);
        let cn = tape.l2_normalize_rows(cands);
        let logits = tape.matmul_nt(qn, cn);
        let scaled = tape.scale(logits, inv_temp);
        let lse = tape.logsumexp_rows(scaled);
        let target = tape.gather_row_items(scaled, &[(0, 0)]);
        per_anchor.push(tape.sub(lse, target));
    }
    let stacked = tape.concat_rows(&per_anchor);
    (tape.mean_all(stacked), counts)
}

/// Contrastive loss over embedding batches, with term counts.
///
/// Negatives are drawn from the doc batch by seeded sampling, so the value
/// is a deterministic function of the inputs and `seed`.
pub fn contrastive_loss_counted<F: Real>(
    query_embeddings: &[Vec<F>],
    doc_embeddings: &[Vec<F>],
    negatives_per_positive: usize,
    temperature: F,
    seed: u64,
) -> Result<(F, LossTermCounts)> {
    if query_embeddings.len() != doc_embeddings.len() {
        return Err(Error::config(format!(
            "query batch ({}) and doc batch ({}) differ in length",
            query_embeddings.len(),
            doc_embeddings.len()
        )));
    }
    if query_embeddings.len() < negatives_per_positive + 1 {
        return Err(Error::config(format!(
            "batch of {} cannot supply {} distinct in-batch negatives",
            query_embeddings.len(),
            negatives_per_positive
        )));
    }
    if !(temperature > F::zero()) {
        return Err(Error::config("temperature must be positive"));
    }
    let dim = query_embeddings[0].len();
    if dim == 0 {
        return Err(Error::config("embeddings must be non-empty"));
    }
    for e in query_embeddings.iter().chain(doc_embeddings) {
        if e.len() != dim {
            return Err(Error::config("embedding dimensions differ within the batch"));
        }
    }

    let mut tape: Tape<F> = Tape::new();
    let queries: Vec<Var> = query_embeddings
        .iter()
        .map(|e| tape.leaf(crate::math::Mat::from_vec(1, dim, e.clone())))
        .collect();
    let docs: Vec<Var> = doc_embeddings
        .iter()
        .map(|e| tape.leaf(crate::math::Mat::from_vec(1, dim, e.clone())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negatives(&mut rng, queries.len(), negatives_per_positive);
    let (loss, counts) = contrastive_loss_graph(&mut tape, &queries, &docs, &negatives, temperature);
    Ok((tape.scalar(loss), counts))
}

/// Contrastive loss over embedding batches.
pub fn contrastive_loss<F: Real>(
    query_embeddings: &[Vec<F>],
    doc_embeddings: &[Vec<F>],
    negatives_per_positive: usize,
    temperature: F,
    seed: u64,
) -> Result<F> {
    contrastive_loss_counted(
        query_embeddings,
        doc_embeddings,
        negatives_per_positive,
        temperature,
        seed,
    )
    .map(|(loss, _)| loss)
}

/// Train `params` on text pairs with one shared encoder for both sides.
///
/// Pairs are shuffled per epoch; even epochs encode anchors as queries,
/// odd epochs swap direction. A trailing chunk too small to supply the
/// configured negatives is skipped.
pub fn train_relevance(
    mut params: ModelParams<f32>,
    config: &EncoderConfig,
    vocab: &Vocab,
    pairs: &[TrainingPair],
    hyper: &ContrastiveHyper,
) -> Result<(ModelParams<f32>, TrainReport)> {
    hyper.validate()?;
    config.validate()?;
    if pairs.len() < hyper.batch_size {
        return Err(Error::config(format!(
            "need at least batch_size ({}) pairs, got {}",
            hyper.batch_size,
            pairs.len()
        )));
    }

    let start = Instant::now();
    let anchors: Vec<TokenSeq> =
        pairs.iter().map(|p| encode(vocab, &p.anchor, config.max_seq_len as usize)).collect();
    let positives: Vec<TokenSeq> =
        pairs.iter().map(|p| encode(vocab, &p.positive, config.max_seq_len as usize)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam: AdamState<f32> = AdamState::new_like(&params.tensors());
    let temperature = hyper.temperature as f32;
    let lr = hyper.learning_rate as f32;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let (query_side, doc_side) =
            if epoch % 2 == 0 { (&anchors, &positives) } else { (&positives, &anchors) };

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            if chunk.len() < hyper.negatives_per_positive + 1 {
                continue;
            }
            let mut batch: Vec<TokenSeq> = Vec::with_capacity(chunk.len() * 2);
            batch.extend(chunk.iter().map(|&i| query_side[i].clone()));
            batch.extend(chunk.iter().map(|&i| doc_side[i].clone()));
            let negatives = sample_negatives(&mut rng, chunk.len(), hyper.negatives_per_positive);

            let step = encoder::grad(&params, config, &batch, |tape, vars| {
                let (q, d) = vars.split_at(chunk.len());
                contrastive_loss_graph(tape, q, d, &negatives, temperature).0
            });
            let (loss, grads) = at_epoch(epoch, step)?;
            if !grads.all_finite() {
                return Err(Error::training(epoch, "non-finite gradient"));
            }
            adam.step(lr, &mut params.tensors_mut(), &grads.tensors());
            loss_sum += loss as f64;
            batches += 1;
        }
        if !params.all_finite() {
            return Err(Error::training(epoch, "parameters diverged"));
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
    }

    let report = TrainReport::new(epoch_losses, start.elapsed().as_secs_f64(), hyper.seed);
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use crate::tokenizer::build_vocab;
    use proptest::prelude::*;
    use rand::Rng;

    fn batch_of(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.to_vec()
    }

    #[test]
    fn identical_embeddings_give_uniform_softmax() {
        let v = vec![0.3, -1.2, 0.7];
        let batch = batch_of(&[v.clone(), v.clone(), v.clone(), v.clone(), v]);
        let loss = contrastive_loss(&batch, &batch, 4, 0.05, 7).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn aligned_pairs_with_orthogonal_negatives_score_near_zero() {
        let batch: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let mut e = vec![0.0; 5];
                e[i] = 2.0;
                e
            })
            .collect();
        let loss = contrastive_loss(&batch, &batch, 4, 0.05, 7).unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn scaling_every_embedding_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let q: Vec<Vec<f64>> = (0..6).map(|_| make(&mut rng)).collect();
        let d: Vec<Vec<f64>> = (0..6).map(|_| make(&mut rng)).collect();
        let scale = |b: &[Vec<f64>], c: f64| -> Vec<Vec<f64>> {
            b.iter().map(|e| e.iter().map(|x| x * c).collect()).collect()
        };
        let base = contrastive_loss(&q, &d, 4, 0.05, 11).unwrap();
        for c in [3.0, 0.001, 250.0] {
            let scaled = contrastive_loss(&scale(&q, c), &scale(&d, c), 4, 0.05, 11).unwrap();
            assert!((scaled - base).abs() < 1e-6, "c={c}: {scaled} vs {base}");
        }
    }

    #[test]
    fn each_anchor_contributes_one_positive_and_four_negatives() {
        let batch: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 1.0]).collect();
        let (_, counts) = contrastive_loss_counted(&batch, &batch, 4, 0.05, 1).unwrap();
        assert_eq!(counts.positive, 8);
        assert_eq!(counts.negative, 8 * 4);
    }

    #[test]
    fn undersized_batch_is_a_configuration_error() {
        let batch: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let err = contrastive_loss(&batch, &batch, 4, 0.05, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mismatched_batches_are_rejected() {
        let q: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let d: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        assert!(matches!(contrastive_loss(&q, &d, 4, 0.05, 1).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn loss_is_deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<Vec<f64>> =
            (0..7).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let a = contrastive_loss(&batch, &batch, 4, 0.05, 5).unwrap();
        let b = contrastive_loss(&batch, &batch, 4, 0.05, 5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #[test]
        fn sampled_negatives_exclude_self_and_repeats(batch in 5usize..12, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lists = sample_negatives(&mut rng, batch, 4);
            prop_assert_eq!(lists.len(), batch);
            for (i, list) in lists.iter().enumerate() {
                prop_assert_eq!(list.len(), 4);
                let mut seen = std::collections::HashSet::new();
                for &j in list {
                    prop_assert!(j < batch);
                    prop_assert_ne!(j, i);
                    prop_assert!(seen.insert(j));
                }
            }
        }
    }

    fn toy_pairs() -> Vec<TrainingPair> {
        let texts = [
            ("wifi", "wireless network access"),
            ("bluetooth", "pair nearby devices"),
            ("brightness", "screen light level"),
            ("volume", "speaker loudness"),
            ("battery", "charge and power"),
            ("storage", "free space on disk"),
            ("language", "interface locale"),
            ("privacy", "permission controls"),
        ];
        texts
            .iter()
            .map(|(a, p)| TrainingPair {
                anchor: a.to_string(),
                positive: p.to_string(),
                source_id: a.to_string(),
            })
            .collect()
    }

    fn toy_setup() -> (Vocab, EncoderConfig, Vec<TrainingPair>) {
        let pairs = toy_pairs();
        let corpus: Vec<&str> =
            pairs.iter().flat_map(|p| [p.anchor.as_str(), p.positive.as_str()]).collect();
        let vocab = build_vocab(&corpus, 280).unwrap();
        let config = EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn_dim: 16,
            vocab_size: vocab.size(),
            max_seq_len: 24,
        };
        (vocab, config, pairs)
    }

    #[test]
    fn separable_pairs_descend() {
        let (vocab, config, pairs) = toy_setup();
        let params = init_params::<f32>(&config, 1).unwrap();
        let hyper = ContrastiveHyper {
            batch_size: 8,
            learning_rate: 3e-3,
            epochs: 30,
            ..ContrastiveHyper::default()
        };
        let (_, report) = train_relevance(params, &config, &vocab, &pairs, &hyper).unwrap();
        assert_eq!(report.epoch_losses.len(), 30);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(
            report.final_loss < report.epoch_losses[0],
            "no descent: {} -> {}",
            report.epoch_losses[0],
            report.final_loss
        );
    }

    #[test]
    fn same_seed_reproduces_identical_parameters() {
        let (vocab, config, pairs) = toy_setup();
        let hyper =
            ContrastiveHyper { batch_size: 8, epochs: 5, ..ContrastiveHyper::default() };
        let run = || {
            let params = init_params::<f32>(&config, 1).unwrap();
            train_relevance(params, &config, &vocab, &pairs, &hyper).unwrap().0
        };
        let (a, b) = (run(), run());
        for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn divergence_is_reported_with_its_epoch() {
        let (vocab, config, pairs) = toy_setup();
        let params = init_params::<f32>(&config, 1).unwrap();
        let hyper = ContrastiveHyper {
            batch_size: 8,
            learning_rate: 1e30,
            epochs: 4,
            ..ContrastiveHyper::default()
        };
        let err = train_relevance(params, &config, &vocab, &pairs, &hyper).unwrap_err();
        assert!(matches!(err, Error::Training { .. }), "got {err:?}");
    }

    #[test]
    fn too_few_pairs_are_rejected() {
        let (vocab, config, pairs) = toy_setup();
        let params = init_params::<f32>(&config, 1).unwrap();
        let hyper = ContrastiveHyper::default();
        let err =
            train_relevance(params, &config, &vocab, &pairs[..3], &hyper).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn batch_below_candidate_count_is_rejected() {
        let hyper = ContrastiveHyper { batch_size: 4, ..ContrastiveHyper::default() };
        assert!(matches!(hyper.validate().unwrap_err(), Error::Config(_)));
    }
}
