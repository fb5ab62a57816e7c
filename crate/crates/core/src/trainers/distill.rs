//! Knowledge distillation: train a small student encoder to reproduce a
//! frozen teacher's pooled embeddings under mean squared error.
//!
//! When the student hidden size differs from the teacher's, a learned
//! linear projection maps student embeddings into the teacher's space for
//! the loss only; it is discarded after training.

use crate::encoder::{
    self, batch_embedding_graph, bind, collect_grads, forward, init_params, EncoderConfig,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::tape::Tape;
use crate::tokenizer::{encode, TokenSeq, Vocab};
use crate::trainers::{adam::AdamState, at_epoch, TrainReport};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

fn default_batch_size() -> usize {
    16
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    40
}

fn default_seed() -> u64 {
    42
}

/// Settings for distillation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillHyper {
    pub student_config: EncoderConfig,
    /// Sentences both models embed; the student matches the teacher here.
    #[serde(default)]
    pub corpus: Vec<String>,
    /// Learn a projection from student to teacher dimension for the loss.
    #[serde(default)]
    pub projection: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl DistillHyper {
    pub fn validate(&self) -> Result<()> {
        self.student_config.validate()?;
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

/// Distill a freshly initialized student from the teacher.
pub fn distill(
    teacher_params: &ModelParams<f32>,
    teacher_config: &EncoderConfig,
    vocab: &Vocab,
    hyper: &DistillHyper,
) -> Result<(ModelParams<f32>, TrainReport)> {
    hyper.validate()?;
    let student = init_params::<f32>(&hyper.student_config, hyper.seed)?;
    distill_from(teacher_params, teacher_config, vocab, hyper, student)
}

/// Distill starting from explicit student parameters.
pub fn distill_from(
    teacher_params: &ModelParams<f32>,
    teacher_config: &EncoderConfig,
    vocab: &Vocab,
    hyper: &DistillHyper,
    mut student: ModelParams<f32>,
) -> Result<(ModelParams<f32>, TrainReport)> {
    hyper.validate()?;
    teacher_config.validate()?;
    if hyper.corpus.is_empty() {
        return Err(Error::validation("distillation corpus is empty"));
    }
    for (name, config) in [("teacher", teacher_config), ("student", &hyper.student_config)] {
        if config.vocab_size != vocab.size() {
            return Err(Error::config(format!(
                "{name} vocab_size {} does not match the vocabulary ({})",
                config.vocab_size,
                vocab.size()
            )));
        }
    }
    let teacher_dim = teacher_config.hidden as usize;
    let student_dim = hyper.student_config.hidden as usize;
    if student_dim != teacher_dim && !hyper.projection {
        return Err(Error::config(format!(
            "student hidden size {student_dim} differs from teacher {teacher_dim}; \
             enable the projection to bridge them"
        )));
    }

    let start = Instant::now();
    let teacher_seqs: Vec<TokenSeq> = hyper
        .corpus
        .iter()
        .map(|t| encode(vocab, t, teacher_config.max_seq_len as usize))
        .collect();
    let teacher_emb: Vec<Vec<f32>> = forward(teacher_params, teacher_config, &teacher_seqs)?
        .into_iter()
        .map(|e| e.values)
        .collect();
    let student_seqs: Vec<TokenSeq> = hyper
        .corpus
        .iter()
        .map(|t| encode(vocab, t, hyper.student_config.max_seq_len as usize))
        .collect();

    let mut proj: Option<Mat<f32>> = if hyper.projection && student_dim != teacher_dim {
        let mut proj_rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
        Some(encoder::xavier(&mut proj_rng, student_dim, teacher_dim))
    } else {
        None
    };

    let mut adam: AdamState<f32> = {
        let mut refs = student.tensors();
        if let Some(p) = &proj {
            refs.push(p);
        }
        AdamState::new_like(&refs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let lr = hyper.learning_rate as f32;
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..hyper.corpus.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let mut tape: Tape<f32> = Tape::new();
            let bound = bind(&mut tape, &student);
            let batch: Vec<TokenSeq> = chunk.iter().map(|&i| student_seqs[i].clone()).collect();
            let vars = at_epoch(
                epoch,
                batch_embedding_graph(&mut tape, &bound, &hyper.student_config, &batch),
            )?;
            let student_out = tape.concat_rows(&vars);
            let proj_var = proj.as_ref().map(|p| tape.leaf(p.clone()));
            let predicted = match proj_var {
                Some(pv) => tape.matmul(student_out, pv),
                None => student_out,
            };
            let mut target = Mat::zeros(chunk.len(), teacher_dim);
            for (r, &i) in chunk.iter().enumerate() {
                target.row_mut(r).copy_from_slice(&teacher_emb[i]);
            }
            let target_var = tape.leaf(target);
            let diff = tape.sub(predicted, target_var);
            let sq = tape.mul(diff, diff);
            let loss = tape.mean_all(sq);
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::training(epoch, format!("non-finite loss {loss_value}")));
            }
            tape.backward(loss);
            let grads = collect_grads(&tape, &bound, &hyper.student_config);
            if !grads.all_finite() {
                return Err(Error::training(epoch, "non-finite gradient"));
            }
            let proj_grad = proj_var.map(|pv| {
                tape.grad(pv).cloned().unwrap_or_else(|| Mat::zeros(student_dim, teacher_dim))
            });
            let mut tensor_refs = student.tensors_mut();
            if let Some(p) = proj.as_mut() {
                tensor_refs.push(p);
            }
            let mut grad_refs = grads.tensors();
            if let Some(pg) = &proj_grad {
                grad_refs.push(pg);
            }
            adam.step(lr, &mut tensor_refs, &grad_refs);
            loss_sum += loss_value as f64;
            batches += 1;
        }
        if !student.all_finite() {
            return Err(Error::training(epoch, "parameters diverged"));
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
    }

    let report = TrainReport::new(epoch_losses, start.elapsed().as_secs_f64(), hyper.seed);
    Ok((student, report))
}
